"""SGN-mini: a per-frame encoder, residual SGM blocks, temporal mean pooling
and a linear classifier.

Parameter count for a config (``D`` input, ``H`` hidden, ``K`` classes,
``n`` subgraphs per block, ``L`` blocks)::

    encoder   D*H + H
    block     n*H*H                  channel weights
              + n*T*T                transductive adjacency
              + n*2*H                inductive attention (instead)
              + n*H*H                concat projection (concat fusion only)
    head      H*K + K

With ``num_blocks == 0`` the model has no temporal mixing at all.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .partition import PartitionScheme, build_masks, check_tau, default_tau
from .sgm import Fusion, Paradigm, SgmLayer, glorot
from .tensor import ShapeError, Tensor, add, linear, mean_over_axis, relu

__all__ = ["ConfigError", "SgnMini", "SgnMiniConfig", "build", "expected_parameter_count"]

CHECKPOINT_FORMAT = "vigraph-checkpoint"


class ConfigError(ValueError):
    """Inconsistent model or training configuration."""


@dataclass
class SgnMiniConfig:
    T: int = 8
    input_dim: int = 16
    hidden_dim: int = 16
    num_blocks: int = 2
    scheme: str = "directional"
    paradigm: str = "transductive"
    fusion: str = "sum"
    tau: Optional[int] = None
    num_classes: int = 2
    seed: int = 0

    def resolved_tau(self) -> int:
        if self.tau is not None:
            return self.tau
        return default_tau(self.T) if self.T >= 2 else 1

    def validate(self) -> "SgnMiniConfig":
        for name in ("T", "input_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_blocks < 0:
            raise ConfigError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        try:
            PartitionScheme.parse(self.scheme)
            Paradigm(self.paradigm)
            Fusion(self.fusion)
            check_tau(self.T, self.resolved_tau())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


class SgnMini:
    """Toy classifier embedding SGM blocks; see the module docstring."""

    def __init__(self, config: SgnMiniConfig):
        self.config = config.validate()
        c = config
        rng = np.random.default_rng(c.seed)
        self.encoder_w = Tensor(glorot(rng, c.input_dim, c.hidden_dim), True, "encoder.weight")
        self.encoder_b = Tensor(np.zeros(c.hidden_dim), True, "encoder.bias")
        masks = build_masks(c.T, c.resolved_tau(), PartitionScheme.parse(c.scheme))
        self.blocks = [
            SgmLayer(masks, c.hidden_dim, c.hidden_dim, Paradigm(c.paradigm), Fusion(c.fusion),
                     rng, layer_id=b)
            for b in range(c.num_blocks)
        ]
        self.head_w = Tensor(glorot(rng, c.hidden_dim, c.num_classes), True, "head.weight")
        self.head_b = Tensor(np.zeros(c.num_classes), True, "head.bias")

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [("encoder.weight", self.encoder_w), ("encoder.bias", self.encoder_b)]
        for b, block in enumerate(self.blocks):
            params += [(f"blocks.{b}.{name}", p) for name, p in block.parameters()]
        params += [("head.weight", self.head_w), ("head.bias", self.head_b)]
        return params

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def forward(self, batch: Tensor) -> Tensor:
        """Logits ``(B, K)`` for frames ``(B, T, input_dim)``."""
        c = self.config
        if batch.ndim != 3 or batch.shape[1:] != (c.T, c.input_dim):
            raise ShapeError(f"expected input (B, {c.T}, {c.input_dim}), got {batch.shape}")
        x = relu(linear(batch, self.encoder_w, self.encoder_b))
        for block in self.blocks:
            x = add(x, block(x))
        return linear(mean_over_axis(x, 1), self.head_w, self.head_b)

    __call__ = forward

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(frames)).data.argmax(axis=1)

    # -- persistence -----------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.parameters():
            if name not in state:
                raise ConfigError(f"checkpoint is missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def export_adjacency(self) -> dict:
        return {"layers": [block.export_adjacency() for block in self.blocks]}

    def save(self, path) -> None:
        """Write a JSON checkpoint with the config and shape-tagged parameters."""
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "config": asdict(self.config),
            "params": {
                name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
                for name, p in self.parameters()
            },
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "SgnMini":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        model = cls(SgnMiniConfig(**doc["config"]))
        state = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["params"].items()
        }
        model.load_state_dict(state)
        return model


def build(config: SgnMiniConfig) -> SgnMini:
    return SgnMini(config)


def expected_parameter_count(config: SgnMiniConfig) -> int:
    """Closed-form parameter count (see the module docstring)."""
    c = config
    n = PartitionScheme.parse(c.scheme).n_subgraphs
    h = c.hidden_dim
    block = n * h * h
    block += n * c.T * c.T if c.paradigm == "transductive" else n * 2 * h
    if c.fusion == "concat":
        block += n * h * h
    return c.input_dim * h + h + c.num_blocks * block + h * c.num_classes + c.num_classes
