"""Spectral penalties: functions of the singular values of an operator.

A penalty is ``Omega(F) = sum_i s_i(sigma_i(F))`` with ``s_i(0) = 0``.  The
kinds supported here are

``trace``                 s(x) = x
``frobenius``             s(x) = x**2
``smooth_trace``          smooth surrogate of ``|x|`` with width ``eps``
``rank_cap``              0 on rank <= r, +inf beyond
``trace_plus_rank``       trace norm restricted to rank <= r
``frobenius_plus_rank``   squared Frobenius norm restricted to rank <= r

Infinite values are represented by ``np.inf``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import xlogy

__all__ = [
    "PenaltySpec",
    "spectrum",
    "penalty_eval",
    "penalty_conjugate",
    "scalar_penalty",
    "scalar_derivative",
    "scalar_conjugate",
    "smooth_trace_eval",
    "smooth_trace_deriv",
    "smooth_trace_conjugate",
    "spectral_gradient",
]

PenaltyKind = Literal[
    "rank_cap", "trace", "frobenius", "trace_plus_rank", "frobenius_plus_rank", "smooth_trace"
]
_RANKED = ("rank_cap", "trace_plus_rank", "frobenius_plus_rank")
SMOOTH_KINDS = ("smooth_trace", "frobenius")


@dataclass(frozen=True)
class PenaltySpec:
    kind: PenaltyKind
    rank: int | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in (*_RANKED, "trace", "frobenius", "smooth_trace"):
            raise ValueError(f"unknown penalty {self.kind!r}")
        if self.kind in _RANKED and (self.rank is None or self.rank < 1):
            raise ValueError(f"{self.kind} needs a rank r >= 1")
        if self.kind == "smooth_trace" and not (self.eps is not None and self.eps > 0):
            raise ValueError("smooth_trace needs eps > 0")

    @property
    def smooth(self) -> bool:
        return self.kind in SMOOTH_KINDS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rank": self.rank, "eps": self.eps}


def spectrum(W) -> np.ndarray:
    """Singular values of a matrix, in non-increasing order."""
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        return np.zeros(0)
    return np.linalg.svd(W, compute_uv=False)


def _check_spectrum(s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0):
        raise ValueError("singular values must be non-negative")
    return np.sort(s)[::-1]


# -- smoothed absolute value ---------------------------------------------------
#
# s(x) = eps*log(1+e^{x/eps}) + eps*log(1+e^{-x/eps}) - 2*eps*log 2
#      = |x| + 2*eps*log1p(e^{-|x|/eps}) - 2*eps*log 2
# The second form never exponentiates a positive number.


def smooth_trace_eval(eps: float, x):
    if not eps > 0:
        raise ValueError("eps must be positive")
    ax = np.abs(np.asarray(x, dtype=float))
    return ax + 2.0 * eps * (np.log1p(np.exp(-ax / eps)) - np.log(2.0))


def smooth_trace_deriv(eps: float, x):
    if not eps > 0:
        raise ValueError("eps must be positive")
    return np.tanh(np.asarray(x, dtype=float) / (2.0 * eps))


def smooth_trace_conjugate(eps: float, tau):
    """``eps * [(1+tau) log(1+tau) + (1-tau) log(1-tau)]`` on ``|tau| <= 1``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    tau = np.asarray(tau, dtype=float)
    inside = np.abs(tau) <= 1.0
    tc = np.clip(tau, -1.0, 1.0)
    val = eps * (xlogy(1.0 + tc, 1.0 + tc) + xlogy(1.0 - tc, 1.0 - tc))
    return np.where(inside, val, np.inf)


# -- per-singular-value functions ----------------------------------------------


def scalar_penalty(p: PenaltySpec, x):
    x = np.asarray(x, dtype=float)
    if p.kind in ("trace", "trace_plus_rank"):
        return np.abs(x)
    if p.kind in ("frobenius", "frobenius_plus_rank"):
        return x * x
    if p.kind == "smooth_trace":
        return smooth_trace_eval(p.eps, x)
    return np.zeros_like(x)


def scalar_derivative(p: PenaltySpec, x):
    x = np.asarray(x, dtype=float)
    if p.kind == "frobenius":
        return 2.0 * x
    if p.kind == "smooth_trace":
        return smooth_trace_deriv(p.eps, x)
    raise ValueError(f"penalty {p.kind!r} is not differentiable")


def scalar_conjugate(p: PenaltySpec, tau):
    tau = np.asarray(tau, dtype=float)
    if p.kind == "trace":
        return np.where(np.abs(tau) <= 1.0, 0.0, np.inf)
    if p.kind == "frobenius":
        return 0.25 * tau * tau
    if p.kind == "smooth_trace":
        return smooth_trace_conjugate(p.eps, tau)
    raise ValueError(f"penalty {p.kind!r} has no separable conjugate")


# -- spectral functions ----------------------------------------------------------


def penalty_eval(p: PenaltySpec, s) -> float:
    """Penalty value for a spectrum ``s`` (singular values)."""
    s = _check_spectrum(s)
    if p.kind in _RANKED:
        if s.size > p.rank and s[p.rank] > 0.0:
            return np.inf
        s = s[: p.rank]
    return float(np.sum(scalar_penalty(p, s)))


def penalty_conjugate(p: PenaltySpec, s) -> float:
    """Conjugate penalty ``sum_i s*(sigma_i)`` evaluated on a dual spectrum."""
    s = _check_spectrum(s)
    return float(np.sum(scalar_conjugate(p, s)))


def spectral_gradient(p: PenaltySpec, W) -> np.ndarray:
    """Gradient ``P diag(s'(sigma)) Q^T`` of a smooth spectral penalty at ``W``."""
    W = np.asarray(W, dtype=float)
    P, s, Qt = np.linalg.svd(W, full_matrices=False)
    return (P * scalar_derivative(p, s)) @ Qt
