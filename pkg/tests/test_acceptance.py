"""One test per acceptance criterion; each prints a PASS/FAIL line.

The ablation criteria (6, 7, 9 and the preset invariants) drive the real
``vigraph ablate`` command line and read its output files.
"""

import csv
import filecmp
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from vigraph.harness.ablation import AblationReport, get_preset
from vigraph.harness.optim import lr_schedule, sgd_momentum_step
from vigraph.model import SgnMiniConfig
from vigraph.oracle import check_model_gradients, classify_edge, gradient_probe, naive_sgm_forward
from vigraph.partition import PartitionScheme, build_masks, default_tau, validate_partition
from vigraph.sgm import SgmLayer
from vigraph.tensor import Tape, Tensor, mul, sum_all

SEEDS = ("0", "1", "2")


def ablate(preset, out):
    cmd = [sys.executable, "-m", "vigraph", "ablate", "--preset", preset, "--out", str(out),
           "--seeds", *SEEDS]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return AblationReport.read(out)


@pytest.fixture(scope="module")
def ablation_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("ablation")


@pytest.fixture(scope="module")
def graph_structure(ablation_dir):
    return ablate("graph-structure", ablation_dir / "graph-structure-a")


@pytest.fixture(scope="module")
def tau_sweep(ablation_dir):
    return ablate("tau-sweep", ablation_dir / "tau-sweep")


@pytest.fixture(scope="module")
def fusion(ablation_dir):
    return ablate("fusion", ablation_dir / "fusion")


# -- 1 ----------------------------------------------------------------------------


def test_criterion_1_partition(verdict):
    start = time.perf_counter()
    bad = []
    for T in range(2, 33):
        for tau in range(1, T):
            for kind in ("local-global", "directional"):
                ms = build_masks(T, tau, PartitionScheme.parse(kind))
                stack = ms.stacked()
                covered = bool(stack.any(axis=0).all())
                disjoint = bool((stack.sum(axis=0) <= 1).all())
                labels = np.empty((T, T), dtype=object)
                for k, name in enumerate(ms.names):
                    labels[ms.masks[k]] = name
                oracle = [[classify_edge(i, j, tau, kind) for j in range(T)] for i in range(T)]
                if not (covered and disjoint and labels.tolist() == oracle
                        and validate_partition(ms).empty):
                    bad.append((T, tau, kind))
    elapsed = time.perf_counter() - start
    verdict(1, "partition cover, disjointness and oracle agreement for T in [2,32]",
            not bad and elapsed < 10, f"{len(bad)} failing cases, {elapsed:.2f}s")


# -- 2 ----------------------------------------------------------------------------


def test_criterion_2_forward_fidelity(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, count = 0.0, 0
    for paradigm in ("transductive", "inductive"):
        for fusion_kind in ("sum", "concat"):
            for scheme in ("full", "local-global", "directional", "full-x4"):
                for n in range(50):
                    T = (2, 3, 4, 8)[n % 4]
                    c_in, c_out = (int(c) for c in rng.integers(1, 5, size=2))
                    masks = build_masks(T, int(rng.integers(1, T)), PartitionScheme.parse(scheme))
                    layer = SgmLayer(masks, c_in, c_out, paradigm, fusion_kind, rng)
                    for a in layer.adjacency or []:
                        a.data[...] = rng.uniform(-1, 1, size=a.shape)
                    for a in layer.attention or []:
                        a.data[...] = rng.uniform(-1, 1, size=a.shape)
                    x = rng.uniform(-2, 2, size=(2, T, c_in))
                    diff = np.abs(layer(Tensor(x)).data - naive_sgm_forward(layer, x)).max()
                    worst = max(worst, float(diff))
                    count += 1
    elapsed = time.perf_counter() - start
    verdict(2, "SGM forward equals naive loops within 1e-12",
            worst <= 1e-12 and elapsed < 30, f"{count} instances, max diff {worst:.2e}, {elapsed:.1f}s")


# -- 3 ----------------------------------------------------------------------------


def test_criterion_3_gradient_fidelity(verdict):
    start = time.perf_counter()
    details, ok = [], True
    for paradigm in ("transductive", "inductive"):
        config = SgnMiniConfig(T=8, input_dim=6, hidden_dim=8, num_blocks=2,
                               scheme="directional", paradigm=paradigm)
        model, x, labels, seed = gradient_probe(config, seed=0)
        report, margin = check_model_gradients(model, x, labels, h=1e-5, threshold=1e-5)
        ok &= report.passed and len(report.errors) == len(model.parameters())
        details.append(f"{paradigm}: max rel err {report.max_error:.1e}, probe seed {seed}, "
                       f"kink margin {margin:.1e}")
    elapsed = time.perf_counter() - start
    verdict(3, "end-to-end gradients match central differences (< 1e-5)",
            ok and elapsed < 300, "; ".join(details) + f"; {elapsed:.1f}s")


# -- 4 ----------------------------------------------------------------------------


def test_criterion_4_mask_respect(verdict):
    rng = np.random.default_rng(4)
    zero_grad, unchanged, trials = True, True, 0
    for scheme in ("local-global", "directional"):
        layer = SgmLayer(build_masks(8, 2, PartitionScheme.parse(scheme)), 4, 4, rng=rng)
        for a in layer.adjacency:
            a.data[...] = rng.uniform(-1, 1, size=a.shape)
        x = Tensor(rng.normal(size=(3, 8, 4)))
        with Tape() as tape:
            out = layer(x)
            loss = sum_all(mul(out, out))
        tape.backward(loss)
        base = out.data.tobytes()
        for k, a in enumerate(layer.adjacency):
            off = ~layer.masks.masks[k]
            zero_grad &= bool(np.all(a.grad[off] == 0.0))
        for _ in range(100):
            k = int(rng.integers(layer.n_subgraphs))
            off = ~layer.masks.masks[k]
            saved = layer.adjacency[k].data.copy()
            layer.adjacency[k].data[off] = rng.normal(scale=100.0, size=int(off.sum()))
            unchanged &= layer(x).data.tobytes() == base
            layer.adjacency[k].data[...] = saved
            trials += 1
    verdict(4, "masked-out adjacency gets zero gradient and cannot change outputs",
            zero_grad and unchanged, f"{trials} perturbations")


# -- 5 ----------------------------------------------------------------------------


def test_criterion_5_fusion_identity(verdict):
    rng = np.random.default_rng(5)
    identical = []
    for paradigm in ("transductive", "inductive"):
        for scheme in ("full", "local-global", "directional", "full-x4"):
            masks = build_masks(8, 1, PartitionScheme.parse(scheme))
            s = SgmLayer(masks, 6, 5, paradigm, "sum", np.random.default_rng(0))
            c = SgmLayer(masks, 6, 5, paradigm, "concat", np.random.default_rng(0))
            for (_, ps), (_, pc) in zip(s.parameters(), c.parameters()):
                pc.data[...] = ps.data
            c.concat_proj.data[...] = np.vstack([np.eye(5)] * c.n_subgraphs)
            x = Tensor(rng.normal(size=(4, 8, 6)))
            identical.append(c(x).data.tobytes() == s(x).data.tobytes())
    verdict(5, "concat fusion with stacked identity projection equals sum fusion bitwise",
            all(identical), f"{sum(identical)}/{len(identical)} configurations")


# -- 6 ----------------------------------------------------------------------------


def test_criterion_6_ablation_ordering(graph_structure, verdict):
    r = graph_structure
    med = {row: r.median(row) for row in r.rows}
    for row in r.rows:
        print(f"  {row:28s} params {r.params(row):6d}  "
              + "  ".join(f"{t} {r.median(row, t):.3f}" for t in r.tasks) + f"  combined {med[row]:.4f}")
    chain = (med["transductive-directional"] > med["transductive-lg"]
             > med["transductive-full"] > med["2d-backbone"])
    backbone = med["2d-backbone"] <= 0.55
    paradigm = all(med[f"transductive-{s}"] >= med[f"inductive-{s}"] for s in ("full", "lg", "directional"))
    replicas = abs(med["transductive-full-x4"] - med["transductive-full"]) <= 0.02
    detail = (f"dir {med['transductive-directional']:.4f} > lg {med['transductive-lg']:.4f} > "
              f"full {med['transductive-full']:.4f} > 2d {med['2d-backbone']:.4f}: {chain}; "
              f"2d <= 0.55: {backbone}; transductive >= inductive: {paradigm}; "
              f"|full-x4 - full| = {abs(med['transductive-full-x4'] - med['transductive-full']):.4f}")
    verdict(6, "graph-structure ablation ordering", chain and backbone and paradigm and replicas, detail)


# -- 7 ----------------------------------------------------------------------------


def test_criterion_7_tau_sanity(tau_sweep, verdict):
    preset = get_preset("tau-sweep")
    T = preset.T
    small, large = f"tau-{default_tau(T)}", f"tau-{T // 2}"
    a, b = tau_sweep.median(small), tau_sweep.median(large)
    verdict(7, "default threshold is at least as accurate as tau = T/2 on interval-order",
            a >= b, f"{small} {a:.4f} vs {large} {b:.4f}")


# -- 8 ----------------------------------------------------------------------------


class _Sched:
    epochs, warmup_epochs, base_lr = 60, 10, 0.01


def test_criterion_8_schedule_and_optimizer(verdict):
    E, W = _Sched.epochs, _Sched.warmup_epochs
    checks = {
        "epoch 0 -> 0.001": lr_schedule(0, _Sched) == 0.01 * 1 / 10,
        "end of warmup -> 0.01": lr_schedule(W - 1, _Sched) == 0.01 and lr_schedule(W, _Sched) == 0.01,
        "cosine endpoint": lr_schedule(E - 1, _Sched)
        == 0.01 * 0.5 * (1 + math.cos(math.pi * (E - 1 - W) / (E - W))),
    }
    p, v = np.array([0.0]), np.zeros(1)
    sgd_momentum_step([p], [np.array([1.0])], [v], 1.0, 0.9)
    first = p.copy()
    sgd_momentum_step([p], [np.array([1.0])], [v], 1.0, 0.9)
    checks["two-step momentum"] = first[0] == -1.0 and (p - first)[0] == -1.0 * 1.9 * 1.0
    verdict(8, "learning-rate schedule and momentum step closed forms", all(checks.values()),
            ", ".join(f"{k}: {v}" for k, v in checks.items()))


# -- 9 ----------------------------------------------------------------------------


def test_criterion_9_determinism(graph_structure, ablation_dir, verdict):
    first = ablation_dir / "graph-structure-a"
    second = ablation_dir / "graph-structure-b"
    ablate("graph-structure", second)
    compared, mismatched = 0, []
    for path in sorted(first.rglob("*")):
        if path.name not in ("metrics.csv", "adjacency.json"):
            continue
        rel = path.relative_to(first)
        compared += 1
        if not filecmp.cmp(path, second / rel, shallow=False):
            mismatched.append(str(rel))
    metrics = sum(1 for p in first.rglob("metrics.csv"))
    verdict(9, "two ablate runs give byte-identical metrics CSVs and adjacency dumps",
            compared > 0 and not mismatched,
            f"{compared} files compared ({metrics} metrics.csv), {len(mismatched)} differ")


# -- preset invariants ----------------------------------------------------------------


def test_fusion_preset_sum_matches_concat(fusion):
    s, c = fusion.median("sum"), fusion.median("concat")
    print(f"sum {s:.4f} ({fusion.params('sum')} params) vs concat {c:.4f} ({fusion.params('concat')} params)")
    assert abs(s - c) <= 0.02
    assert fusion.params("sum") < fusion.params("concat")


def test_training_loss_decreases_for_every_row(graph_structure, tau_sweep, fusion):
    for report in (graph_structure, tau_sweep, fusion):
        for r in report.results:
            assert r.late_loss < r.early_loss, (report.preset, r.row, r.task, r.seed)


def test_output_files_are_schema_valid(graph_structure, ablation_dir):
    root = ablation_dir / "graph-structure-a"
    for path in root.rglob("metrics.csv"):
        rows = list(csv.DictReader(open(path)))
        assert rows and list(rows[0]) == ["epoch", "lr", "train_loss", "train_acc", "val_acc"]
        assert [int(r["epoch"]) for r in rows] == list(range(len(rows)))
        assert all(math.isfinite(float(r["train_loss"])) for r in rows)
    for path in root.rglob("adjacency.json"):
        doc = json.loads(path.read_text())
        for layer in doc["layers"]:
            m = np.array(layer["matrices"])
            assert m.shape == (len(layer["names"]), layer["T"], layer["T"])
    assert Path(root / "summary.csv").exists()
