"""Synthetic frame-feature sequences whose labels live in temporal order.

Every task is built from a list of noise-free label-0 *placements*; the
label-1 placements are exactly those sequences with the frame order
reversed. Any statistic that ignores frame order (per-frame features, the
multiset of frames, temporal mean pooling) therefore has the same
distribution under both labels, so an order-blind model sits at chance.

Tasks:

``direction``
    A one-hot bump moves one feature slot per frame, left to right for
    label 0 and right to left for label 1.
``interval-order``
    Marker channel 0 and marker channel 1 each fire in one frame, more than
    ``default_tau(T)`` frames apart (or exactly ``gap`` frames apart). Label
    0 means channel 0 fires first.
``local-motion``
    A static bump steps one slot right (label 0) or left (label 1) between
    two adjacent frames at a random time.

Gaussian noise with ``noise_std`` is added after the structure is placed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .partition import default_tau

__all__ = [
    "TASKS",
    "DataError",
    "SyntheticDataset",
    "SyntheticTask",
    "generate",
    "load_jsonl",
    "placements",
    "save_jsonl",
    "split",
]

TASKS = ("direction", "interval-order", "local-motion")

MARKER_A = 0
MARKER_B = 1


class DataError(ValueError):
    """Invalid task parameters or an impossible split."""


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "direction"
    T: int = 8
    feature_dim: int = 16
    noise_std: float = 0.0
    gap: Optional[int] = None

    def __post_init__(self):
        if self.kind not in TASKS:
            raise DataError(f"unknown task {self.kind!r}; expected one of {TASKS}")
        if self.noise_std < 0:
            raise DataError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.T < 2:
            raise DataError(f"T must be >= 2, got {self.T}")
        if self.kind == "direction" and self.feature_dim < self.T:
            raise DataError("direction task needs feature_dim >= T")
        if self.kind == "interval-order":
            if self.feature_dim < 2:
                raise DataError("interval-order task needs feature_dim >= 2")
            min_gap = default_tau(self.T) + 1
            if self.gap is not None and not min_gap <= self.gap <= self.T - 1:
                raise DataError(f"gap must lie in [{min_gap}, {self.T - 1}], got {self.gap}")
            if min_gap > self.T - 1:
                raise DataError(f"T={self.T} leaves no room for a gap above tau")
        if self.kind == "local-motion" and self.feature_dim < 2:
            raise DataError("local-motion task needs feature_dim >= 2")


def _direction(task: SyntheticTask) -> list[np.ndarray]:
    T, D = task.T, task.feature_dim
    out = []
    for start in range(D - T + 1):
        x = np.zeros((T, D))
        x[np.arange(T), start + np.arange(T)] = 1.0
        out.append(x)
    return out


def _interval_order(task: SyntheticTask) -> list[np.ndarray]:
    T, D = task.T, task.feature_dim
    min_gap = default_tau(T) + 1
    out = []
    for first in range(T):
        for second in range(first + min_gap, T):
            if task.gap is not None and second - first != task.gap:
                continue
            x = np.zeros((T, D))
            x[first, MARKER_A] = 1.0
            x[second, MARKER_B] = 1.0
            out.append(x)
    return out


def _local_motion(task: SyntheticTask) -> list[np.ndarray]:
    T, D = task.T, task.feature_dim
    out = []
    for pos in range(D - 1):
        for step in range(1, T):
            x = np.zeros((T, D))
            x[:step, pos] = 1.0
            x[step:, pos + 1] = 1.0
            out.append(x)
    return out


_BUILDERS = {
    "direction": _direction,
    "interval-order": _interval_order,
    "local-motion": _local_motion,
}


def placements(task: SyntheticTask) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """All noise-free sequences for label 0 and label 1 (frame-reversed)."""
    zero = _BUILDERS[task.kind](task)
    return zero, [x[::-1].copy() for x in zero]


@dataclass
class SyntheticDataset:
    """``frames`` has shape ``(n, T, feature_dim)``; ``labels`` shape ``(n,)``."""

    frames: np.ndarray
    labels: np.ndarray
    task: SyntheticTask
    seed: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        return self.frames[i], int(self.labels[i])

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return [self[i] for i in range(len(self))]

    def subset(self, idx: np.ndarray) -> "SyntheticDataset":
        return SyntheticDataset(self.frames[idx], self.labels[idx], self.task, self.seed,
                                dict(self.meta))


def generate(task: SyntheticTask, n: int, seed: int) -> SyntheticDataset:
    """Draw ``n`` balanced samples (class counts differ by at most one)."""
    if n < 2:
        raise DataError(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    by_label = placements(task)
    labels = rng.permutation(np.arange(n) % 2)
    picks = rng.integers(0, len(by_label[0]), size=n)
    frames = np.stack([by_label[y][p] for y, p in zip(labels, picks)])
    if task.noise_std > 0:
        frames = frames + task.noise_std * rng.standard_normal(frames.shape)
    return SyntheticDataset(frames, labels.astype(np.int64), task, seed)


def split(dataset: SyntheticDataset, train_fraction: float, seed: int):
    """Label-stratified, reproducible split into ``(train, val)``."""
    if not 0 < train_fraction < 1:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for label in np.unique(dataset.labels):
        idx = rng.permutation(np.flatnonzero(dataset.labels == label))
        cut = int(round(train_fraction * len(idx)))
        if cut == 0 or cut == len(idx):
            raise DataError(f"split leaves class {label} empty on one side")
        train_idx.append(idx[:cut])
        val_idx.append(idx[cut:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return dataset.subset(train_idx), dataset.subset(val_idx)


# -- export -----------------------------------------------------------------------
#
# JSON lines. First line is a header object
#   {"format": "vigraph-dataset", "task": {...}, "seed": int, "n": int}
# followed by one object per sample
#   {"label": int, "frames": [[float, ...] * feature_dim] * T}


def save_jsonl(dataset: SyntheticDataset, path) -> None:
    header = {"format": "vigraph-dataset", "task": asdict(dataset.task), "seed": dataset.seed,
              "n": len(dataset)}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for frames, label in zip(dataset.frames, dataset.labels):
            fh.write(json.dumps({"label": int(label), "frames": frames.tolist()}) + "\n")


def load_jsonl(path) -> SyntheticDataset:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    if header.get("format") != "vigraph-dataset":
        raise DataError(f"{path}: not a vigraph dataset file")
    rows = [json.loads(line) for line in lines[1:] if line]
    frames = np.array([r["frames"] for r in rows], dtype=np.float64)
    labels = np.array([r["label"] for r in rows], dtype=np.int64)
    return SyntheticDataset(frames, labels, SyntheticTask(**header["task"]), header["seed"])
