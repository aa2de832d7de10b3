"""Slow brute-force references for the partition, the SGM forward pass and
gradients. Nothing here calls into the aggregation code of :mod:`vigraph.sgm`
or uses matrix routines; layers are only read for their parameter values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "EXT",
    "GradCheckReport",
    "KinkTracker",
    "NumericError",
    "check_model_gradients",
    "classify_edge",
    "finite_diff_grad",
    "gradcheck",
    "gradient_probe",
    "naive_sgm_forward",
    "reference_cross_entropy",
    "reference_logits",
    "reference_sgm_forward",
    "relative_error",
]


class NumericError(ArithmeticError):
    """The probed function returned a non-finite value."""


def classify_edge(i: int, j: int, tau: int, scheme: str) -> str:
    """Subgraph label of the edge from frame ``j`` to frame ``i``.

    ``scheme`` is ``"full"``, ``"local-global"`` or ``"directional"``.
    Self-loops go to local-backward.
    """
    d = i - j
    if scheme == "full":
        return "full"
    if scheme == "local-global":
        if abs(d) <= tau:
            return "local"
        return "global"
    if scheme == "directional":
        if d < -tau:
            return "global-backward"
        if -tau <= d <= 0:
            return "local-backward"
        if 0 < d <= tau:
            return "local-forward"
        if tau < d:
            return "global-forward"
    raise ValueError(f"cannot classify under scheme {scheme!r}")


# -- naive forward ---------------------------------------------------------------


def _frame_transform(x, w):
    """``[x_j W]`` as nested lists, by explicit sums."""
    c_in, c_out = len(w), len(w[0])
    return [[sum(xj[a] * w[a][c] for a in range(c_in)) for c in range(c_out)] for xj in x]


def _attention_rows(h, a, mask, slope):
    T = len(h)
    c = len(h[0])
    rows = []
    for i in range(T):
        scores = {}
        for j in range(T):
            if mask[i][j]:
                s = sum(a[q] * h[i][q] for q in range(c)) + sum(a[c + q] * h[j][q] for q in range(c))
                scores[j] = s if s > 0 else slope * s
        row = [0.0] * T
        if scores:
            top = max(scores.values())
            weights = {j: math.exp(s - top) for j, s in scores.items()}
            total = sum(weights.values())
            for j, wgt in weights.items():
                row[j] = wgt / total
        rows.append(row)
    return rows


def _naive_sample(layer, x):
    T = len(x)
    n = layer.n_subgraphs
    masks = [m.tolist() for m in layer.masks.masks]
    c_out = layer.c_out
    results = []
    for k in range(n):
        w = layer.weights[k].data.tolist()
        h = _frame_transform(x, w)
        if layer.paradigm.value == "transductive":
            raw = layer.adjacency[k].data.tolist()
            alpha = [[raw[i][j] if masks[k][i][j] else 0.0 for j in range(T)] for i in range(T)]
        else:
            alpha = _attention_rows(h, layer.attention[k].data.tolist(), masks[k], 0.2)
        y = []
        for i in range(T):
            row = []
            for c in range(c_out):
                acc = 0.0
                for j in range(T):
                    if masks[k][i][j]:
                        acc += alpha[i][j] * h[j][c]
                row.append(acc if acc > 0 else 0.0)
            y.append(row)
        results.append(y)

    if layer.fusion.value == "sum":
        return [[sum(results[k][i][c] for k in range(n)) for c in range(c_out)] for i in range(T)]
    proj = layer.concat_proj.data.tolist()
    fused = []
    for i in range(T):
        cat = []
        for k in range(n):
            cat.extend(results[k][i])
        fused.append([sum(cat[q] * proj[q][c] for q in range(len(cat))) for c in range(c_out)])
    return fused


def naive_sgm_forward(layer, x) -> np.ndarray:
    """Evaluate an SGM layer by explicit loops over subgraph, frame, neighbour
    and channel. ``x`` is ``(T, C)`` or ``(B, T, C)``."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim == 2:
        return np.array(_naive_sample(layer, x.tolist()))
    return np.array([_naive_sample(layer, sample.tolist()) for sample in x])


# -- finite differences ------------------------------------------------------------


def finite_diff_grad(f: Callable[[], float], params: Sequence[np.ndarray], h: float = 1e-5):
    """Central-difference gradient of ``f`` w.r.t. each array in ``params``.

    ``f`` takes no arguments and reads the arrays, which are perturbed in
    place one coordinate at a time and restored afterwards. The difference
    is formed in the arrays' own dtype, so extended-precision arrays and
    objectives keep their extra digits.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f()
            flat[idx] = orig - h
            down = f()
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite objective at coordinate {idx}")
            gflat[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class GradCheckReport:
    threshold: float
    errors: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "max_error": self.max_error,
                "passed": self.passed, "per_parameter": dict(self.errors)}


def gradcheck(
    loss_fn: Callable[[], float],
    analytic: dict,
    named_params: Sequence[tuple[str, np.ndarray]],
    h: float = 1e-5,
    threshold: float = 1e-5,
) -> GradCheckReport:
    """Compare ``analytic`` gradients (keyed like ``named_params``) with central
    differences of ``loss_fn``."""
    numeric = finite_diff_grad(loss_fn, [p for _, p in named_params], h)
    report = GradCheckReport(threshold)
    for (name, _), num in zip(named_params, numeric):
        report.errors[name] = float(relative_error(analytic[name], num).max(initial=0.0))
    return report


# -- extended-precision reference ------------------------------------------------
#
# Central differences in float64 carry roundoff of roughly eps*|f|/h ~ 1e-11,
# which swamps gradient coordinates near the 1e-8 relative-error floor. The
# objective used for finite differences is therefore re-evaluated here in
# 80-bit extended precision by code that shares nothing with the autodiff path.

EXT = np.longdouble


class KinkTracker:
    """Smallest nonzero |input| seen at any ReLU or leaky-ReLU.

    Exact zeros come from empty neighbour rows and stay zero under
    perturbation, so they are skipped.
    """

    def __init__(self):
        self.margin = math.inf

    def see(self, values) -> None:
        v = np.abs(np.asarray(values)).ravel()
        v = v[v != 0]
        if v.size:
            self.margin = min(self.margin, float(v.min()))


def _relu(z, tracker):
    if tracker is not None:
        tracker.see(z)
    return np.where(z > 0, z, EXT(0))


def _ext_softmax(scores, mask):
    mask = np.broadcast_to(mask, scores.shape)
    top = np.max(np.where(mask, scores, EXT(-np.inf)), axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, EXT(0))
    e = np.where(mask, np.exp(np.where(mask, scores - top, EXT(0))), EXT(0))
    total = e.sum(axis=-1, keepdims=True)
    return e / np.where(total > 0, total, EXT(1))


def reference_sgm_forward(params: dict, prefix: str, masks, paradigm: str, fusion: str, x,
                          tracker: KinkTracker | None = None):
    """Extended-precision SGM forward for ``x`` of shape ``(B, T, C)``.

    ``params`` maps ``prefix + "weight.k"`` etc. to arrays.
    """
    outs = []
    for k, mask in enumerate(masks):
        w = params[f"{prefix}weight.{k}"]
        h = np.einsum("btc,cd->btd", x, w)
        if paradigm == "transductive":
            alpha = np.where(mask, params[f"{prefix}adjacency.{k}"], EXT(0))
            agg = np.einsum("ij,bjd->bid", alpha, h)
        else:
            a = params[f"{prefix}attention.{k}"]
            c = h.shape[-1]
            target = np.einsum("btd,d->bt", h, a[:c])
            source = np.einsum("btd,d->bt", h, a[c:])
            scores = target[:, :, None] + source[:, None, :]
            if tracker is not None:
                tracker.see(scores[:, mask])
            scores = np.where(scores > 0, scores, EXT(0.2) * scores)
            agg = np.einsum("bij,bjd->bid", _ext_softmax(scores, mask), h)
        outs.append(_relu(agg, tracker))
    if fusion == "sum":
        total = outs[0]
        for o in outs[1:]:
            total = total + o
        return total
    return np.einsum("btq,qd->btd", np.concatenate(outs, axis=-1), params[f"{prefix}concat_proj"])


def reference_logits(params: dict, config, x, tracker: KinkTracker | None = None):
    """Extended-precision SGN-mini forward; ``config`` is an ``SgnMiniConfig``."""
    from .partition import PartitionScheme, build_masks

    masks = build_masks(config.T, config.resolved_tau(), PartitionScheme.parse(config.scheme)).masks
    x = np.asarray(x, dtype=EXT)
    z = np.einsum("btc,cd->btd", x, params["encoder.weight"]) + params["encoder.bias"]
    z = _relu(z, tracker)
    for b in range(config.num_blocks):
        z = z + reference_sgm_forward(params, f"blocks.{b}.", masks, config.paradigm,
                                      config.fusion, z, tracker)
    pooled = z.mean(axis=1)
    return np.einsum("bc,ck->bk", pooled, params["head.weight"]) + params["head.bias"]


def reference_cross_entropy(logits, labels) -> EXT:
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    return np.mean(log_norm - z[rows, np.asarray(labels)])


def check_model_gradients(model, x, labels, h: float = 1e-5, threshold: float = 1e-5):
    """Autodiff gradients of the mean cross-entropy of ``model`` on ``(x, labels)``
    against extended-precision central differences.

    Returns ``(report, kink_margin)``; the comparison is only meaningful when
    the margin is comfortably larger than ``h``.
    """
    from .tensor import Tape, Tensor, cross_entropy_logits

    model.zero_grad()
    with Tape() as tape:
        loss = cross_entropy_logits(model(Tensor(x)), labels)
    tape.backward(loss)
    named = model.parameters()
    analytic = {name: p.grad.copy() for name, p in named}
    model.zero_grad()

    ext = {name: p.data.astype(EXT) for name, p in named}
    tracker = KinkTracker()
    reference_logits(ext, model.config, x, tracker)
    report = gradcheck(
        lambda: reference_cross_entropy(reference_logits(ext, model.config, x), labels),
        analytic,
        [(name, ext[name]) for name, _ in named],
        h=h,
        threshold=threshold,
    )
    return report, tracker.margin


def gradient_probe(config, seed: int = 0, batch: int = 2, jitter: float = 0.3,
                   min_margin: float = 1e-3, max_tries: int = 50):
    """A generic, kink-free gradient-check instance for ``config``.

    Starting from ``seed``, builds the model, jitters every parameter by
    ``U(-jitter, jitter)``, draws inputs in ``[-2, 2]`` and alternating
    labels, and moves to the next seed until every ReLU input sits at least
    ``min_margin`` away from zero. Returns ``(model, x, labels, seed)``.
    """
    from dataclasses import replace

    from .model import build

    for s in range(seed, seed + max_tries):
        model = build(replace(config, seed=s))
        rng = np.random.default_rng([s, 17])
        for _, p in model.parameters():
            p.data[...] += rng.uniform(-jitter, jitter, size=p.shape)
        x = rng.uniform(-2.0, 2.0, size=(batch, config.T, config.input_dim))
        labels = [b % config.num_classes for b in range(batch)]
        tracker = KinkTracker()
        ext = {name: p.data.astype(EXT) for name, p in model.parameters()}
        reference_logits(ext, model.config, x, tracker)
        if tracker.margin >= min_margin:
            return model, x, labels, s
    raise NumericError(f"no kink-free probe found in seeds [{seed}, {seed + max_tries})")
