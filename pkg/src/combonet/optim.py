"""Optimizers and the cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class ScheduleParams:
    """Cosine annealing with warm restarts every `period` steps."""
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    period: int = 100
    waves: int = 1

    def __post_init__(self):
        if self.lr_max <= 0 or self.lr_min <= 0:
            raise ValueError("learning rates must be positive")
        if self.lr_min > self.lr_max:
            raise ValueError(f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")


def cosine_lr(step: int, params: ScheduleParams) -> float:
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    phase = (step % params.period) / params.period
    return params.lr_min + 0.5 * (params.lr_max - params.lr_min) * (1.0 + math.cos(math.pi * phase))


def _check_grad(g: np.ndarray, name: str) -> None:
    if not np.isfinite(g).all():
        raise FloatingPointError(f"non-finite gradient for parameter {name!r}")


class SGD:
    def __init__(self, params: list[Tensor]):
        self.params = list(params)

    def step(self, lr: float) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            _check_grad(p.grad, f"param[{i}]")
            p.data = p.data - (lr * p.grad).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam:
    """Adam with bias correction, one (m, v) pair per parameter.

    Parameter groups carry a rate multiplier so the fine-tuning stage can
    run the sub-networks at a fraction of the combiner rate.
    """

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 lr_scale: list[float] | None = None):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.scales = list(lr_scale) if lr_scale is not None else [1.0] * len(self.params)
        if len(self.scales) != len(self.params):
            raise ValueError("lr_scale length must match params")
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    @classmethod
    def from_groups(cls, groups: list[tuple[list[Tensor], float]], **kw) -> "Adam":
        params: list[Tensor] = []
        scales: list[float] = []
        for plist, scale in groups:
            params.extend(plist)
            scales.extend([scale] * len(plist))
        return cls(params, lr_scale=scales, **kw)

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            _check_grad(g, f"param[{i}]")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            update = lr * self.scales[i] * mhat / (np.sqrt(vhat) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
