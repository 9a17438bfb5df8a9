"""Segmentation losses: weighted BCE, smoothed dice, and their combination.

The combined loss is alpha * weighted_bce - (1 - alpha) * dice_term; the
dice term measures overlap and is maximized, hence the minus sign.
Probabilities are clamped away from {0, 1} before any logarithm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class ComboLossParams:
    """Constants of the combined loss.

    alpha weighs BCE against dice, beta weighs the foreground term inside
    the BCE, s is the dice smoothing constant. The tuned operating range
    is the open interval; alpha = 0 and alpha = 1 are accepted as the
    documented degenerate cases (pure dice / pure weighted BCE).
    """
    alpha: float = 0.4
    beta: float = 0.85
    s: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.s <= 0:
            raise ValueError(f"smoothing constant must be positive, got {self.s}")


def _as_target(t, like: Tensor) -> Tensor:
    if isinstance(t, Tensor):
        t = t.data
    arr = np.asarray(t, dtype=like.data.dtype)
    if arr.shape != like.data.shape:
        raise ValueError(f"target shape {arr.shape} != prediction shape {like.shape}")
    return Tensor(arr)


def weighted_bce(p: Tensor, t, beta: float) -> Tensor:
    """-(1/N) sum[ beta*t*ln(p) + (1-beta)*(1-t)*ln(1-p) ]."""
    t = _as_target(t, p)
    pc = T.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    pos = T.mul(t, T.log(pc))
    neg = T.mul(T.sub(1.0, t), T.log(T.sub(1.0, pc)))
    return -T.tmean(T.add(T.mul(pos, beta), T.mul(neg, 1.0 - beta)))


def bce(p: Tensor, t) -> Tensor:
    """Plain mean binary cross-entropy (the unweighted ablation baseline)."""
    t = _as_target(t, p)
    pc = T.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    pos = T.mul(t, T.log(pc))
    neg = T.mul(T.sub(1.0, t), T.log(T.sub(1.0, pc)))
    return -T.tmean(T.add(pos, neg))


def dice_term(p: Tensor, t, s: float = 1.0) -> Tensor:
    """(sum(t*p) + s) / (sum(t) + sum(p) + s), in (0, 1]."""
    t = _as_target(t, p)
    overlap = T.tsum(T.mul(t, p))
    mass = T.add(T.tsum(t), T.tsum(p))
    return T.div(T.add(overlap, s), T.add(mass, s))


def combo_loss(p: Tensor, t, params: ComboLossParams) -> Tensor:
    parts = []
    if params.alpha > 0.0:
        parts.append(T.mul(weighted_bce(p, t, params.beta), params.alpha))
    if params.alpha < 1.0:
        parts.append(T.mul(dice_term(p, t, params.s), -(1.0 - params.alpha)))
    if len(parts) == 1:
        return parts[0]
    return T.add(parts[0], parts[1])


LOSS_NAMES = ("bce", "weighted-bce", "dice", "combo")


def make_loss(name: str, params: ComboLossParams):
    """Loss factory for the ablation harness; returns f(p, t) -> scalar Tensor."""
    if name == "bce":
        return lambda p, t: bce(p, t)
    if name == "weighted-bce":
        return lambda p, t: weighted_bce(p, t, params.beta)
    if name == "dice":
        return lambda p, t: T.mul(dice_term(p, t, params.s), -1.0)
    if name == "combo":
        return lambda p, t: combo_loss(p, t, params)
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")
