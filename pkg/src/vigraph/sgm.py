"""Structured graph module: masked temporal aggregation per subgraph, then fusion.

For every subgraph ``k`` of an :class:`~vigraph.partition.EdgeMaskSet` the
layer computes ``relu(A_k @ (x @ W_k))`` where ``A_k`` is the subgraph's
``T x T`` adjacency, zero outside the subgraph's mask. The per-subgraph
results are fused by summation or by channel concatenation followed by a
linear projection.

``A_k`` comes from one of two paradigms:

* transductive: a learnable ``T x T`` matrix per subgraph, shared by every
  sample. Entries outside the mask are stored but never read.
* inductive: additive attention over frame features, recomputed per sample,
  ``softmax_j(leaky_relu(a_k . [W_k x_i || W_k x_j]))`` restricted to the mask.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Optional

import numpy as np

from .partition import EdgeMaskSet
from .tensor import (
    ShapeError,
    Tensor,
    add,
    apply_mask,
    concat_last_dim,
    leaky_relu,
    masked_softmax_rows,
    matmul,
    relu,
    reshape,
    slice_last,
    transpose_last,
)

__all__ = [
    "ATTENTION_SLOPE",
    "Fusion",
    "Paradigm",
    "ParadigmError",
    "SgmLayer",
    "init_layer",
]

ATTENTION_SLOPE = 0.2


class Paradigm(str, Enum):
    TRANSDUCTIVE = "transductive"
    INDUCTIVE = "inductive"


class Fusion(str, Enum):
    SUM = "sum"
    CONCAT = "concat"


class ParadigmError(RuntimeError):
    """An operation was requested that the layer's paradigm does not support."""


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def row_normalized(mask: np.ndarray) -> np.ndarray:
    """``1/|N_i|`` on the masked-in entries of each non-empty row, 0 elsewhere."""
    counts = mask.sum(axis=1, keepdims=True)
    return np.where(mask, 1.0 / np.maximum(counts, 1), 0.0)


class SgmLayer:
    """One structured graph module mapping ``(..., T, c_in)`` to ``(..., T, c_out)``.

    Parameters are drawn from ``rng`` in a fixed order (channel weights,
    then attention vectors, then the concat projection), so equal seeds
    give bitwise-equal layers.
    """

    def __init__(
        self,
        masks: EdgeMaskSet,
        c_in: int,
        c_out: int,
        paradigm: Paradigm = Paradigm.TRANSDUCTIVE,
        fusion: Fusion = Fusion.SUM,
        rng: Optional[np.random.Generator] = None,
        layer_id: int = 0,
    ):
        if c_in < 1 or c_out < 1:
            raise ShapeError(f"channel sizes must be >= 1, got c_in={c_in}, c_out={c_out}")
        if len(masks) < 1:
            raise ShapeError("mask set has no subgraphs")
        rng = np.random.default_rng(0) if rng is None else rng
        self.masks = masks
        self.c_in = c_in
        self.c_out = c_out
        self.paradigm = Paradigm(paradigm)
        self.fusion = Fusion(fusion)
        self.layer_id = layer_id

        n = len(masks)
        self.weights = [
            Tensor(glorot(rng, c_in, c_out), requires_grad=True, name=f"weight.{k}")
            for k in range(n)
        ]
        self.adjacency: Optional[list[Tensor]] = None
        self.attention: Optional[list[Tensor]] = None
        if self.paradigm is Paradigm.TRANSDUCTIVE:
            self.adjacency = [
                Tensor(row_normalized(m), requires_grad=True, name=f"adjacency.{k}")
                for k, m in enumerate(masks.masks)
            ]
        else:
            self.attention = [
                Tensor(rng.uniform(-0.1, 0.1, size=2 * c_out), requires_grad=True,
                       name=f"attention.{k}")
                for k in range(n)
            ]
        self.concat_proj: Optional[Tensor] = None
        if self.fusion is Fusion.CONCAT:
            self.concat_proj = Tensor(glorot(rng, n * c_out, c_out), requires_grad=True,
                                      name="concat_proj")

    @property
    def T(self) -> int:
        return self.masks.T

    @property
    def n_subgraphs(self) -> int:
        return len(self.masks)

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [(f"weight.{k}", w) for k, w in enumerate(self.weights)]
        if self.adjacency is not None:
            params += [(f"adjacency.{k}", a) for k, a in enumerate(self.adjacency)]
        if self.attention is not None:
            params += [(f"attention.{k}", a) for k, a in enumerate(self.attention)]
        if self.concat_proj is not None:
            params.append(("concat_proj", self.concat_proj))
        return params

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    # -- adjacency -----------------------------------------------------------

    def transductive_adjacency(self, k: int) -> Tensor:
        """Raw adjacency ``k`` with every entry outside subgraph ``k`` zeroed."""
        if self.adjacency is None:
            raise ParadigmError("inductive layer has no learned adjacency")
        return apply_mask(self.adjacency[k], self.masks.masks[k])

    def inductive_adjacency(self, x: Tensor, k: int) -> Tensor:
        """Per-sample attention adjacency of subgraph ``k`` for frames ``x``."""
        if self.attention is None:
            raise ParadigmError("transductive layer has no attention parameters")
        self._check_input(x)
        return self._attention(matmul(x, self.weights[k]), k)

    def _attention(self, h: Tensor, k: int) -> Tensor:
        a = transpose_last(reshape(self.attention[k], (2, self.c_out)))
        e = matmul(h, a)
        target = slice_last(e, 0, 1)
        source = transpose_last(slice_last(e, 1, 2))
        scores = leaky_relu(add(target, source), ATTENTION_SLOPE)
        return masked_softmax_rows(scores, self.masks.masks[k])

    # -- reasoning -----------------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        if x.ndim < 2 or x.shape[-2] != self.T:
            raise ShapeError(f"expected {self.T} frames in shape (..., T, C), got {x.shape}")
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {x.shape}")

    def subgraph_reason(self, x: Tensor, k: int) -> Tensor:
        """``relu(A_k @ (x @ W_k))`` for subgraph ``k``."""
        self._check_input(x)
        h = matmul(x, self.weights[k])
        if self.paradigm is Paradigm.TRANSDUCTIVE:
            adj = self.transductive_adjacency(k)
        else:
            adj = self._attention(h, k)
        return relu(matmul(adj, h))

    def forward(self, x: Tensor) -> Tensor:
        outs = [self.subgraph_reason(x, k) for k in range(self.n_subgraphs)]
        if self.fusion is Fusion.SUM:
            y = outs[0]
            for o in outs[1:]:
                y = add(y, o)
            return y
        return matmul(concat_last_dim(outs), self.concat_proj)

    __call__ = forward

    # -- serialization -------------------------------------------------------

    def export_adjacency(self) -> dict:
        """Masked per-subgraph adjacency matrices as a JSON-ready document."""
        if self.adjacency is None:
            raise ParadigmError("inductive adjacency is per-sample; nothing to export")
        return {
            "layer": self.layer_id,
            "T": self.T,
            "tau": self.masks.tau,
            "scheme": self.masks.scheme.name,
            "names": list(self.masks.names),
            "matrices": [
                np.where(m, a.data, 0.0).tolist()
                for m, a in zip(self.masks.masks, self.adjacency)
            ],
        }

    def import_adjacency(self, dump: dict) -> None:
        if self.adjacency is None:
            raise ParadigmError("inductive layer has no learned adjacency")
        if list(dump["names"]) != list(self.masks.names):
            raise ShapeError(f"subgraph names {dump['names']} do not match {self.masks.names}")
        for a, m in zip(self.adjacency, dump["matrices"]):
            m = np.asarray(m, dtype=np.float64)
            if m.shape != a.shape:
                raise ShapeError(f"adjacency shape {m.shape} does not match {a.shape}")
            a.data[...] = m

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.parameters():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} != {p.shape}")
            p.data[...] = arr


def init_layer(
    masks: EdgeMaskSet,
    c_in: int,
    c_out: int,
    paradigm: Paradigm = Paradigm.TRANSDUCTIVE,
    fusion: Fusion = Fusion.SUM,
    seed: int = 0,
) -> SgmLayer:
    return SgmLayer(masks, c_in, c_out, paradigm, fusion, np.random.default_rng(seed))
