"""SGD with momentum and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..partition import ParameterError
from ..tensor import ShapeError, Tensor

__all__ = ["SGD", "lr_schedule", "sgd_momentum_step"]


def lr_schedule(epoch: int, config) -> float:
    """Learning rate for ``epoch`` (0-based).

    Linear warmup ``base_lr * (epoch + 1) / warmup_epochs`` for the first
    ``warmup_epochs`` epochs, then half-cosine decay over the remainder.
    ``config`` needs ``epochs``, ``warmup_epochs`` and ``base_lr``.
    """
    epochs, warmup, base = config.epochs, config.warmup_epochs, config.base_lr
    if not 0 <= epoch < epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {epochs})")
    if epoch < warmup:
        return base * (epoch + 1) / warmup
    return base * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup) / (epochs - warmup)))


def sgd_momentum_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    """In place: ``v = momentum * v + g``, ``p -= lr * v``, then ``g = 0``."""
    if not len(params) == len(grads) == len(velocity):
        raise ShapeError("params, grads and velocity must have equal lengths")
    for p, g, v in zip(params, grads, velocity):
        if not p.shape == g.shape == v.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p -= lr * v
        g.fill(0.0)


class SGD:
    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        sgd_momentum_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.velocity,
            lr,
            self.momentum,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
