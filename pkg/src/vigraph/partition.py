"""Decomposition of the complete temporal graph into interval/direction subgraphs.

Frames ``0..T-1`` are nodes; every ordered pair ``(i, j)`` including
self-loops is an edge. Row ``i`` of a mask lists the in-neighbours of frame
``i``, so entry ``(i, j)`` is the edge from frame ``j`` to frame ``i``.

With ``d = i - j`` and threshold ``tau`` the schemes are::

    local-global   local           |d| <= tau
                   global          |d| >  tau
    directional    global-backward  d <  -tau
                   local-backward  -tau <= d <= 0
                   local-forward    0 <  d <= tau
                   global-forward   d >  tau

The directional rule admits ``d == 0`` into both local subsets when read
literally; self-loops are placed in local-backward only so the subsets stay
disjoint. The choice is recorded on every mask set as ``SELF_LOOP_CONVENTION``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DIRECTIONAL",
    "FULL",
    "LOCAL_GLOBAL",
    "SELF_LOOP_CONVENTION",
    "EdgeMaskSet",
    "ParameterError",
    "PartitionScheme",
    "ValidationReport",
    "build_masks",
    "check_tau",
    "default_tau",
    "full_replicated",
    "validate_partition",
]

SELF_LOOP_CONVENTION = "self-loop->local-backward"

DIRECTIONAL_NAMES = ("global-backward", "local-backward", "local-forward", "global-forward")
LOCAL_GLOBAL_NAMES = ("local", "global")


class ParameterError(ValueError):
    """Raised for out-of-range partition parameters (T, tau, replicas)."""


@dataclass(frozen=True)
class PartitionScheme:
    """How the complete graph is split.

    ``kind`` is one of ``"full"``, ``"local-global"``, ``"directional"`` or
    ``"full-replicated"``; ``replicas`` only matters for the last one.
    """

    kind: str
    replicas: int = 1

    _KINDS = ("full", "local-global", "directional", "full-replicated")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ParameterError(f"unknown partition scheme {self.kind!r}")
        if self.kind == "full-replicated" and self.replicas < 1:
            raise ParameterError(f"replicas must be >= 1, got {self.replicas}")
        if self.kind != "full-replicated" and self.replicas != 1:
            raise ParameterError(f"{self.kind} scheme takes no replicas")

    @property
    def n_subgraphs(self) -> int:
        return {"full": 1, "local-global": 2, "directional": 4}.get(self.kind, self.replicas)

    @property
    def decomposing(self) -> bool:
        return self.kind in ("local-global", "directional")

    @property
    def name(self) -> str:
        if self.kind == "full-replicated":
            return f"full-x{self.replicas}"
        return self.kind

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str) -> "PartitionScheme":
        """Parse ``full``, ``local-global`` (``lg``), ``directional``
        (``lg-dir``) or ``full-xN``."""
        key = text.strip().lower()
        aliases = {"lg": "local-global", "l&g": "local-global", "lg-dir": "directional"}
        key = aliases.get(key, key)
        m = re.fullmatch(r"full-?x(\d+)", key)
        if m:
            return cls("full-replicated", int(m.group(1)))
        return cls(key)


FULL = PartitionScheme("full")
LOCAL_GLOBAL = PartitionScheme("local-global")
DIRECTIONAL = PartitionScheme("directional")


def full_replicated(n: int) -> PartitionScheme:
    return PartitionScheme("full-replicated", n)


def default_tau(T: int) -> int:
    """Local/global threshold of one eighth of the clip, at least one frame."""
    if T < 2:
        raise ParameterError(f"default_tau needs T >= 2, got {T}")
    return max(1, T // 8)


def check_tau(T: int, tau: int) -> int:
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if tau < 1 or (T >= 2 and tau > T - 1):
        raise ParameterError(f"tau={tau} out of range [1, {max(T - 1, 1)}] for T={T}")
    return int(tau)


@dataclass(frozen=True, eq=False)
class EdgeMaskSet:
    """Boolean ``T x T`` masks, one per subgraph, with parallel names."""

    T: int
    tau: int
    scheme: PartitionScheme
    masks: tuple
    names: tuple
    conventions: tuple = field(default=())

    def __len__(self) -> int:
        return len(self.masks)

    def stacked(self) -> np.ndarray:
        return np.stack(self.masks) if self.masks else np.zeros((0, self.T, self.T), bool)

    def union(self) -> np.ndarray:
        return np.logical_or.reduce(self.stacked(), axis=0)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "tau": self.tau,
            "scheme": self.scheme.name,
            "conventions": list(self.conventions),
            "names": list(self.names),
            "masks": [m.astype(int).tolist() for m in self.masks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "EdgeMaskSet":
        masks = tuple(_frozen(np.asarray(m, dtype=bool)) for m in doc["masks"])
        return cls(
            T=int(doc["T"]),
            tau=int(doc["tau"]),
            scheme=PartitionScheme.parse(doc["scheme"]),
            masks=masks,
            names=tuple(doc["names"]),
            conventions=tuple(doc.get("conventions", ())),
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_masks(T: int, tau: int, scheme: PartitionScheme) -> EdgeMaskSet:
    """Build the disjoint edge masks of ``scheme`` for a clip of ``T`` frames."""
    check_tau(T, tau)
    idx = np.arange(T)
    d = idx[:, None] - idx[None, :]
    conventions: tuple = ()

    if scheme.kind == "full":
        masks, names = [np.ones((T, T), bool)], ["full"]
    elif scheme.kind == "full-replicated":
        masks = [np.ones((T, T), bool) for _ in range(scheme.replicas)]
        names = [f"full-{r}" for r in range(scheme.replicas)]
    elif scheme.kind == "local-global":
        masks = [np.abs(d) <= tau, np.abs(d) > tau]
        names = list(LOCAL_GLOBAL_NAMES)
    else:
        masks = [d < -tau, (d >= -tau) & (d <= 0), (d > 0) & (d <= tau), d > tau]
        names = list(DIRECTIONAL_NAMES)
        conventions = (SELF_LOOP_CONVENTION,)

    return EdgeMaskSet(
        T=T,
        tau=int(tau),
        scheme=scheme,
        masks=tuple(_frozen(m) for m in masks),
        names=tuple(names),
        conventions=conventions,
    )


@dataclass
class ValidationReport:
    """Coverage holes and overlap cells found in a mask set.

    ``overlaps`` maps each cell claimed by two or more masks to the indices
    of those masks. The report is empty iff the set is a disjoint cover.
    """

    holes: list = field(default_factory=list)
    overlaps: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.holes and not self.overlaps


def validate_partition(masks: EdgeMaskSet) -> ValidationReport:
    stack = masks.stacked()
    counts = stack.sum(axis=0) if len(stack) else np.zeros((masks.T, masks.T), int)
    report = ValidationReport()
    for i, j in zip(*np.nonzero(counts == 0)):
        report.holes.append((int(i), int(j)))
    for i, j in zip(*np.nonzero(counts > 1)):
        report.overlaps[(int(i), int(j))] = [int(k) for k in np.nonzero(stack[:, i, j])[0]]
    return report
