"""Pointwise losses psi_i(v) = loss(v, t_i), their derivatives and conjugates.

All functions broadcast over arrays of predictions and targets.  Conjugates
return ``np.inf`` outside their domain.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import expit, xlogy

__all__ = ["LossSpec", "loss_eval", "loss_grad", "loss_conjugate"]


@dataclass(frozen=True)
class LossSpec:
    """Loss family together with the targets it compares against."""

    kind: Literal["squared", "logistic"]
    target: np.ndarray | float

    def __post_init__(self):
        if self.kind not in ("squared", "logistic"):
            raise ValueError(f"unknown loss {self.kind!r}")
        t = np.asarray(self.target, dtype=float)
        if not np.all(np.isfinite(t)):
            raise ValueError("loss targets must be finite")
        if self.kind == "logistic" and not np.all(np.isin(t, (-1.0, 1.0))):
            raise ValueError("logistic targets must be -1 or +1")
        object.__setattr__(self, "target", t)


def loss_eval(spec: LossSpec, v):
    v = np.asarray(v, dtype=float)
    t = spec.target
    if spec.kind == "squared":
        return 0.5 * (t - v) ** 2
    # log(1 + exp(-t v)) without overflow
    return np.logaddexp(0.0, -t * v)


def loss_grad(spec: LossSpec, v):
    v = np.asarray(v, dtype=float)
    t = spec.target
    if spec.kind == "squared":
        return v - t
    return -t * expit(-t * v)


def loss_conjugate(spec: LossSpec, beta):
    """``sup_v  beta * v - psi(v)``.

    For the logistic loss the supremum is finite only when ``beta * t`` lies
    in ``[-1, 0]``; at the endpoints ``0 log 0`` is taken as 0.
    """
    beta = np.asarray(beta, dtype=float)
    t = spec.target
    if spec.kind == "squared":
        return 0.5 * beta**2 + beta * t
    u = -beta * t
    inside = (u >= 0.0) & (u <= 1.0)
    uc = np.clip(u, 0.0, 1.0)
    val = xlogy(uc, uc) + xlogy(1.0 - uc, 1.0 - uc)
    return np.where(inside, val, np.inf)
