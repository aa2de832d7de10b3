"""Dense float64 tensors with a tape-based reverse-mode autodiff.

Only the operations the structured graph layer and its training loop need
are provided. Operations are recorded on the active :class:`Tape` (entered
with ``with Tape() as tape:``); outside a tape every result is a constant,
which is how inference runs.

Gradients accumulate into ``Tensor.grad``; callers zero them between steps.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "ContractError",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "apply_mask",
    "backward",
    "concat_last_dim",
    "cross_entropy_logits",
    "leaky_relu",
    "linear",
    "masked_softmax_rows",
    "matmul",
    "mean_over_axis",
    "mul",
    "relu",
    "reshape",
    "scalar_mul",
    "slice_last",
    "sub",
    "sum_all",
    "transpose_last",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when a tape is misused (non-scalar loss, reused tape, ...)."""


_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "vigraph_active_tape", default=None
)

Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation.

    Args:
        data: Anything ``np.asarray`` accepts. Stored as float64, row-major.
        requires_grad: Whether adjoints should be accumulated into ``grad``.
        name: Optional label, used in gradient-check reports.
    """

    __slots__ = ("data", "requires_grad", "name", "_grad")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> Optional[np.ndarray]:
        """Same-shape adjoint buffer; ``None`` iff the tensor needs no grad."""
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad.fill(0.0)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed operations.

    A tape is single-use: :meth:`backward` replays adjoints in exact reverse
    execution order and then marks the tape consumed.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Vjp]] = []
        self._outputs: set[int] = set()
        self._token = None
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise ContractError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Vjp) -> None:
        if self.consumed:
            raise ContractError("cannot record on a consumed tape")
        self._entries.append((out, inputs, vjp))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` of every requires-grad tensor reachable from ``loss``."""
        if self.consumed:
            raise ContractError("tape has already been consumed by a backward pass")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise ContractError("loss was not produced on this tape")
        self.consumed = True

        loss.grad[...] += 1.0
        live = {id(loss)}
        for out, inputs, vjp in reversed(self._entries):
            if id(out) not in live:
                continue
            in_grads = vjp(out.grad)
            for inp, g in zip(inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad[...] += g
                live.add(id(inp))
        self._entries.clear()
        self._outputs.clear()


def backward(loss: Tensor, tape: Tape) -> None:
    """Run ``tape``'s single backward pass from ``loss``."""
    tape.backward(loss)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Vjp) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""
    _broadcast_shape(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), vjp)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at exactly 0 is taken as 0."""
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return _result(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def apply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Keep ``x`` where ``mask`` is true and write an exact ``+0.0`` elsewhere.

    Masked-out entries of ``x`` never reach the output, so perturbing them
    leaves it bitwise unchanged and their adjoint is exactly zero.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"apply_mask: mask shape {mask.shape} does not match {x.shape}")
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),))


# --- shape manipulation -----------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose_last(x: Tensor) -> Tensor:
    """Swap the two trailing axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose_last needs at least 2 dims, got {x.shape}")
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _result(out, (x,), lambda g: (np.swapaxes(g, -1, -2),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    width = x.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice_last: [{start}:{stop}] out of range for width {width}")

    def vjp(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _result(np.ascontiguousarray(x.data[..., start:stop]), (x,), vjp)


def concat_last_dim(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat_last_dim needs at least one tensor")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last_dim: leading shapes differ, {tensors[0].shape} vs {t.shape}"
            )
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def vjp(g):
        return tuple(g[..., bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=-1), tensors, vjp)


# --- reductions ---------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape),))


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    n = x.shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape),)

    return _result(x.data.mean(axis=axis), (x,), vjp)


# --- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the two trailing axes, broadcasting leading ones.

    Both operands need at least two dimensions.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold the batch into one product instead of summing per-slice results
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), vjp)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` applied over the last axis of ``x``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --- attention / loss ---------------------------------------------------------


def masked_softmax_rows(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax along the last axis restricted to entries where ``mask`` is true.

    Masked-out entries come out as exact zeros (and get zero adjoints); a
    row with no masked-in entry is all zeros. ``mask`` broadcasts against
    ``scores``.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    s = scores.data
    row_max = np.max(np.where(mask, s, -np.inf), axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(np.where(mask, s - row_max, -np.inf)), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = e / np.where(denom > 0, denom, 1.0)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (scores,), vjp)


def cross_entropy_logits(logits: Tensor, labels: Iterable[int]) -> Tensor:
    """Mean negative log-softmax of the true class over ``N`` rows."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects N x K logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise IndexError(f"label {bad} out of range for {k} classes")
    labels = labels.astype(np.intp)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(log_norm - z[rows, labels])

    def vjp(g):
        p = np.exp(z - log_norm[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _result(np.asarray(loss), (logits,), vjp)
