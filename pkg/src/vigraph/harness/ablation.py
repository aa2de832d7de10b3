"""Ablation presets mirroring the graph-structure, threshold and fusion studies.

Every configuration is trained once per seed with identical data and budget;
the reported score of a configuration on a task is the median final
validation accuracy over seeds, and its combined score is the mean of those
medians over the preset's tasks.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..model import SgnMiniConfig, expected_parameter_count
from ..synthdata import SyntheticTask
from .train import TrainConfig, train

__all__ = [
    "PRESETS",
    "AblationPreset",
    "AblationReport",
    "AblationRow",
    "RunResult",
    "get_preset",
    "run_ablation",
]

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class AblationRow:
    name: str
    paradigm: str = "transductive"
    scheme: str = "directional"
    fusion: str = "sum"
    num_blocks: int = 2
    tau: Optional[int] = None


@dataclass(frozen=True)
class AblationPreset:
    name: str
    rows: tuple
    tasks: tuple
    T: int = 8
    feature_dim: int = 16
    hidden_dim: int = 16
    epochs: int = 60
    warmup_epochs: int = 10
    base_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    n_samples: int = 2500
    train_fraction: float = 0.8

    def scaled(self, scale: float) -> "AblationPreset":
        """Shrink or stretch the epoch budget (and warmup) by ``scale``."""
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        if scale == 1.0:
            return self
        epochs = max(2, round(self.epochs * scale))
        warmup = min(epochs - 1, max(1, round(self.warmup_epochs * scale)))
        return replace(self, epochs=epochs, warmup_epochs=warmup)

    def train_config(self, row: AblationRow, task: SyntheticTask, seed: int,
                     output_dir: Optional[str] = None) -> TrainConfig:
        model = SgnMiniConfig(
            T=self.T, input_dim=self.feature_dim, hidden_dim=self.hidden_dim,
            num_blocks=row.num_blocks, scheme=row.scheme, paradigm=row.paradigm,
            fusion=row.fusion, tau=row.tau, seed=seed,
        )
        return TrainConfig(
            model=model, task=task, epochs=self.epochs, warmup_epochs=self.warmup_epochs,
            base_lr=self.base_lr, momentum=self.momentum, batch_size=self.batch_size,
            seed=seed, output_dir=output_dir, n_samples=self.n_samples,
            train_fraction=self.train_fraction,
        )


def _graph_structure() -> AblationPreset:
    rows = (
        AblationRow("2d-backbone", num_blocks=0, scheme="full"),
        AblationRow("inductive-full", "inductive", "full"),
        AblationRow("transductive-full", "transductive", "full"),
        AblationRow("inductive-lg", "inductive", "local-global"),
        AblationRow("transductive-lg", "transductive", "local-global"),
        AblationRow("inductive-directional", "inductive", "directional"),
        AblationRow("transductive-directional", "transductive", "directional"),
        AblationRow("transductive-full-x4", "transductive", "full-x4"),
    )
    tasks = (
        SyntheticTask("direction", 8, 16, noise_std=0.5),
        SyntheticTask("interval-order", 8, 16, noise_std=0.5),
    )
    return AblationPreset("graph-structure", rows, tasks)


def _tau_sweep() -> AblationPreset:
    rows = tuple(AblationRow(f"tau-{tau}", tau=tau) for tau in (1, 2, 4))
    tasks = (SyntheticTask("interval-order", 8, 16, noise_std=0.5, gap=4),)
    return AblationPreset("tau-sweep", rows, tasks)


def _fusion() -> AblationPreset:
    rows = (AblationRow("sum", fusion="sum"), AblationRow("concat", fusion="concat"))
    return replace(_graph_structure(), name="fusion", rows=rows)


PRESETS = {
    "graph-structure": _graph_structure,
    "tau-sweep": _tau_sweep,
    "fusion": _fusion,
}


def get_preset(name: str, scale: float = 1.0) -> AblationPreset:
    try:
        preset = PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return preset.scaled(scale)


@dataclass
class RunResult:
    row: str
    task: str
    seed: int
    params: int
    val_acc: float
    final_train_loss: float
    early_loss: float
    late_loss: float


@dataclass
class AblationReport:
    preset: str
    tasks: list
    rows: list
    results: list = field(default_factory=list)

    def accuracies(self, row: str, task: str) -> list:
        return [r.val_acc for r in self.results if r.row == row and r.task == task]

    def median(self, row: str, task: Optional[str] = None) -> float:
        """Median over seeds for ``task``, or the mean of per-task medians."""
        if task is not None:
            return statistics.median(self.accuracies(row, task))
        return statistics.fmean(self.median(row, t) for t in self.tasks)

    def params(self, row: str) -> int:
        return next(r.params for r in self.results if r.row == row)

    def ranked(self) -> list:
        return sorted(self.rows, key=lambda r: (-self.median(r), self.rows.index(r)))

    def table(self) -> str:
        header = ["rank", "row", "params"] + [f"{t} (median)" for t in self.tasks] + ["combined"]
        lines = ["  ".join(header)]
        for rank, row in enumerate(self.ranked(), 1):
            cells = [str(rank), row, str(self.params(row))]
            cells += [f"{self.median(row, t):.4f}" for t in self.tasks]
            cells.append(f"{self.median(row):.4f}")
            lines.append("  ".join(cells))
        return "\n".join(lines)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        with open(out / "results.csv", "w", newline="") as fh:
            cols = list(asdict(self.results[0])) if self.results else []
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for r in self.results:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        with open(out / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "row", "params", *self.tasks, "combined"])
            for rank, row in enumerate(self.ranked(), 1):
                writer.writerow([rank, row, self.params(row),
                                 *[repr(self.median(row, t)) for t in self.tasks],
                                 repr(self.median(row))])

    @classmethod
    def read(cls, out_dir) -> "AblationReport":
        out = Path(out_dir)
        meta = json.loads((out / "preset.json").read_text())
        with open(out / "results.csv", newline="") as fh:
            results = [
                RunResult(r["row"], r["task"], int(r["seed"]), int(r["params"]),
                          float(r["val_acc"]), float(r["final_train_loss"]),
                          float(r["early_loss"]), float(r["late_loss"]))
                for r in csv.DictReader(fh)
            ]
        return cls(meta["name"], meta["tasks"], meta["rows"], results)


def _run_one(job) -> RunResult:
    row, task, seed, config = job
    metrics = train(config)
    losses = metrics.column("train_loss")
    window = min(5, len(losses))
    return RunResult(
        row=row,
        task=task,
        seed=seed,
        params=expected_parameter_count(config.model),
        val_acc=metrics.final_val_acc,
        final_train_loss=losses[-1],
        early_loss=statistics.median(losses[:window]),
        late_loss=statistics.median(losses[-window:]),
    )


def run_ablation(preset: AblationPreset, out_dir, seeds=DEFAULT_SEEDS, jobs: int = 1) -> AblationReport:
    """Train every (row, task, seed) of ``preset``; each run gets its own
    directory ``out_dir/<row>/<task>/seed-<n>``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "preset.json").write_text(json.dumps({
        "name": preset.name,
        "rows": [r.name for r in preset.rows],
        "tasks": [t.kind for t in preset.tasks],
        "seeds": list(seeds),
        "settings": {k: v for k, v in asdict(preset).items() if k not in ("rows", "tasks")},
    }, indent=2) + "\n")

    queue = []
    for row in preset.rows:
        for task in preset.tasks:
            for seed in seeds:
                run_dir = out / row.name / task.kind / f"seed-{seed}"
                config = preset.train_config(row, task, seed, str(run_dir))
                queue.append((row.name, task.kind, seed, config))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, queue))
    else:
        results = []
        for job in queue:
            results.append(_run_one(job))
            log.info("%s/%s seed %d: val_acc %.4f", job[0], job[1], job[2], results[-1].val_acc)

    report = AblationReport(preset.name, [t.kind for t in preset.tasks],
                            [r.name for r in preset.rows], results)
    report.write(out)
    return report
