"""Training and evaluation loop for SGN-mini on synthetic tasks."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..model import ConfigError, SgnMini, SgnMiniConfig, build
from ..synthdata import SyntheticDataset, SyntheticTask, generate, split
from ..tensor import Tape, Tensor, cross_entropy_logits
from .optim import SGD, lr_schedule

__all__ = [
    "METRIC_FIELDS",
    "MetricsLog",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "run_training",
    "train",
]

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_acc")


@dataclass
class TrainConfig:
    model: SgnMiniConfig = field(default_factory=SgnMiniConfig)
    task: SyntheticTask = field(default_factory=SyntheticTask)
    epochs: int = 40
    warmup_epochs: int = 5
    base_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    output_dir: Optional[str] = None
    n_samples: int = 2500
    train_fraction: float = 0.8

    def validate(self) -> "TrainConfig":
        self.model.validate()
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.model.T != self.task.T or self.model.input_dim != self.task.feature_dim:
            raise ConfigError(
                f"model expects (T={self.model.T}, input_dim={self.model.input_dim}) but task "
                f"produces (T={self.task.T}, feature_dim={self.task.feature_dim})"
            )
        return self

    # Flat JSON layout: every TrainConfig scalar plus the model/task fields,
    # with ``task`` naming the task kind and ``feature_dim`` doubling as the
    # model's input width.

    def to_flat(self) -> dict:
        m, t = self.model, self.task
        return {
            "task": t.kind,
            "T": t.T,
            "feature_dim": t.feature_dim,
            "noise_std": t.noise_std,
            "gap": t.gap,
            "hidden_dim": m.hidden_dim,
            "num_blocks": m.num_blocks,
            "scheme": m.scheme,
            "paradigm": m.paradigm,
            "fusion": m.fusion,
            "tau": m.tau,
            "num_classes": m.num_classes,
            "epochs": self.epochs,
            "warmup_epochs": self.warmup_epochs,
            "base_lr": self.base_lr,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "n_samples": self.n_samples,
            "train_fraction": self.train_fraction,
        }

    @classmethod
    def from_flat(cls, doc: dict) -> "TrainConfig":
        known = set(cls().to_flat())
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        flat = {**cls().to_flat(), **doc}
        task = SyntheticTask(kind=flat["task"], T=flat["T"], feature_dim=flat["feature_dim"],
                             noise_std=float(flat["noise_std"]), gap=flat["gap"])
        model = SgnMiniConfig(T=flat["T"], input_dim=flat["feature_dim"],
                              hidden_dim=flat["hidden_dim"], num_blocks=flat["num_blocks"],
                              scheme=flat["scheme"], paradigm=flat["paradigm"],
                              fusion=flat["fusion"], tau=flat["tau"],
                              num_classes=flat["num_classes"], seed=flat["seed"])
        scalars = {f.name: flat[f.name] for f in fields(cls) if f.name not in ("model", "task")}
        return cls(model=model, task=task, **scalars)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_flat(doc)


@dataclass
class MetricsLog:
    """One row per completed epoch."""

    rows: list = field(default_factory=list)

    def append(self, epoch: int, lr: float, train_loss: float, train_acc: float,
               val_acc: float, wall_time: float) -> None:
        if self.rows and epoch <= self.rows[-1]["epoch"]:
            raise ValueError(f"epoch {epoch} does not follow {self.rows[-1]['epoch']}")
        self.rows.append(dict(epoch=epoch, lr=lr, train_loss=train_loss, train_acc=train_acc,
                              val_acc=val_acc, wall_time=wall_time))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    @property
    def final_val_acc(self) -> float:
        return self.rows[-1]["val_acc"]

    def write_csv(self, path) -> None:
        """Metrics without wall time, so equal seeds give byte-identical files."""
        _write_csv(path, METRIC_FIELDS, self.rows)

    def write_timing(self, path) -> None:
        _write_csv(path, ("epoch", "wall_time"), self.rows)


def _write_csv(path, columns, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for r in rows:
                writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def evaluate(model: SgnMini, data: SyntheticDataset, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(data), batch_size):
        pred = model.predict(data.frames[start : start + batch_size])
        correct += int((pred == data.labels[start : start + batch_size]).sum())
    return correct / len(data)


@dataclass
class TrainResult:
    model: SgnMini
    log: MetricsLog
    train_set: SyntheticDataset
    val_set: SyntheticDataset


def run_training(config: TrainConfig) -> TrainResult:
    config.validate()
    data = generate(config.task, config.n_samples, config.seed)
    train_set, val_set = split(data, config.train_fraction, config.seed + 1)
    model = build(config.model)
    opt = SGD([p for _, p in model.parameters()], config.momentum)
    rng = np.random.default_rng([config.seed, 7])
    metrics = MetricsLog()

    for epoch in range(config.epochs):
        start = time.perf_counter()
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for b in range(0, len(order), config.batch_size):
            idx = order[b : b + config.batch_size]
            labels = train_set.labels[idx]
            with Tape() as tape:
                logits = model(Tensor(train_set.frames[idx]))
                loss = cross_entropy_logits(logits, labels)
            tape.backward(loss)
            opt.step(lr)
            loss_sum += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        val_acc = evaluate(model, val_set)
        metrics.append(epoch, lr, loss_sum / len(order), correct / len(order), val_acc,
                       time.perf_counter() - start)
        log.debug("epoch %d lr %.5f loss %.4f val %.4f", epoch, lr, loss_sum / len(order), val_acc)

    if config.output_dir is not None:
        write_outputs(config, model, metrics)
    return TrainResult(model, metrics, train_set, val_set)


def train(config: TrainConfig) -> MetricsLog:
    """Train per ``config``; writes artifacts when ``output_dir`` is set."""
    return run_training(config).log


def write_outputs(config: TrainConfig, model: SgnMini, metrics: MetricsLog) -> None:
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_flat(), indent=2, sort_keys=True) + "\n")
        model.save(out / "checkpoint.json")
        if model.blocks and model.config.paradigm == "transductive":
            (out / "adjacency.json").write_text(json.dumps(model.export_adjacency()) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write run outputs under {out}: {exc.strerror}") from exc
    metrics.write_csv(out / "metrics.csv")
    metrics.write_timing(out / "timing.csv")

