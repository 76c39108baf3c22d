"""Low-rank solvers for spectrally regularized bilinear regression.

The finite problem is

    min_alpha  (1/N) sum_i psi_i(x_{a(i)}^T alpha y_{b(i)}) + lam * Omega(alpha)

where ``x_a`` / ``y_b`` are rows of the user / object square roots.  It is
solved over factored coefficients ``alpha = U V^T`` by gradient descent with
Armijo backtracking.  When a local minimum has a (numerically) rank-deficient
factor it is a global minimum of the convex problem; otherwise one column is
added and the descent restarts from the current point.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from .kernels import GramFactor
from .losses import LossSpec, loss_conjugate, loss_eval, loss_grad
from .model import OperatorModel, RatingsDataset, predict_all
from .penalties import (
    PenaltySpec,
    penalty_eval,
    scalar_conjugate,
    scalar_derivative,
    scalar_penalty,
)

__all__ = [
    "NumericalFailure",
    "UnsupportedPenalty",
    "RankCapWarning",
    "SolveConfig",
    "SolveReport",
    "objective",
    "gradient",
    "solve_lowrank",
    "solve_frob_lowrank",
    "duality_gap",
    "factored_spectrum",
]

_log = logging.getLogger(__name__)

ARMIJO_SLOPE = 1e-4
BACKTRACK = 0.5
MAX_ESCAPES = 50  # saddle swaps per solve


class NumericalFailure(RuntimeError):
    """The objective became NaN or infinite during descent."""


class UnsupportedPenalty(ValueError):
    pass


class RankCapWarning(RuntimeWarning):
    """Rank escalation reached ``rank_max`` without a rank-deficient minimum."""


@dataclass(frozen=True)
class SolveConfig:
    """Settings for :func:`solve_lowrank` and friends.

    ``penalty`` defaults to the smoothed trace norm with
    ``eps = 1e-3 * mean |rating|`` (or ``eps`` when given).  ``floor`` is the
    multiple of ``eps`` below which a singular value counts as zero: the
    smoothed penalty is quadratic there, so the trace-norm zeros of the
    convex problem show up as values of order ``eps``.
    """

    lam: float
    penalty: PenaltySpec | None = None
    loss: str = "squared"
    rank0: int = 1
    rank_max: int | None = None
    eps: float | None = None
    grad_tol: float = 1e-6
    ftol: float = 0.0
    max_iter: int = 5000
    rank_tol: float = 1e-6
    floor: float = 4.0
    init_scale: float = 1e-3
    escalation: str = "random"
    direction: str = "bb"
    prune: bool = True
    center: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.loss not in ("squared", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.rank0 < 1 or (self.rank_max is not None and self.rank_max < self.rank0):
            raise ValueError("need 1 <= rank0 <= rank_max")
        for name in ("grad_tol", "rank_tol", "init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.escalation not in ("random", "gradient"):
            raise ValueError(f"unknown escalation {self.escalation!r}")
        if self.direction not in ("bb", "lbfgs"):
            raise ValueError(f"unknown descent direction {self.direction!r}")
        if self.ftol < 0:
            raise ValueError("ftol must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def resolve_penalty(self, d: RatingsDataset) -> PenaltySpec:
        if self.penalty is not None:
            return self.penalty
        return PenaltySpec("smooth_trace", eps=self.eps or default_eps(d))

    def offset(self, d: RatingsDataset) -> float:
        return float(np.mean(d.ratings)) if self.center and self.loss == "squared" else 0.0


def default_eps(d: RatingsDataset) -> float:
    scale = float(np.mean(np.abs(d.ratings)))
    return 1e-3 * (scale if scale > 0 else 1.0)


@dataclass
class SolveReport:
    objective: float
    rank: int
    stage_ranks: list[int] = field(default_factory=list)
    stage_iterations: list[int] = field(default_factory=list)
    history: list[float] = field(default_factory=list)
    converged: bool = False
    rank_deficient: bool = False
    certified: bool = False
    hit_rank_max: bool = False
    gap: float | None = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return int(sum(self.stage_iterations))


# ---------------------------------------------------------------------------
# data term


class _DataTerm:
    """Loss over observed pairs, evaluated through factored blocks.

    The residual weights live in a sparse n_X x n_Y matrix whose pattern is
    fixed at construction, so ``X^T S (Y V)`` costs O(N r + n m r).
    """

    def __init__(self, d: RatingsDataset, loss: str, offset: float):
        self.a = d.users
        self.b = d.items
        self.n = len(d)
        self.spec = LossSpec(loss, d.ratings - offset)
        order = np.lexsort((d.items, d.users))
        indptr = np.concatenate([[0], np.cumsum(np.bincount(d.users, minlength=d.n_users))])
        self._order = order
        self._S = sp.csr_matrix(
            (np.zeros(self.n), d.items[order].astype(np.int32), indptr.astype(np.int32)),
            shape=(d.n_users, d.n_items),
        )

    def weights(self, w) -> sp.csr_matrix:
        self._S.data[:] = np.asarray(w)[self._order]
        return self._S

    def value(self, pred) -> float:
        return float(np.sum(loss_eval(self.spec, pred)) / self.n)

    def derivative(self, pred) -> np.ndarray:
        return loss_grad(self.spec, pred) / self.n


def _check_factors(d: RatingsDataset, xf: GramFactor, yf: GramFactor):
    if xf.n != d.n_users or yf.n != d.n_items:
        raise ValueError(
            f"factors cover ({xf.n}, {yf.n}) entities, dataset has ({d.n_users}, {d.n_items})"
        )


# ---------------------------------------------------------------------------
# penalties on factored coefficients


def factored_spectrum(U, V) -> np.ndarray:
    """Singular values of ``U V^T`` from thin QRs and the small r x r core."""
    Ru = np.linalg.qr(U, mode="r")
    Rv = np.linalg.qr(V, mode="r")
    return np.linalg.svd(Ru @ Rv.T, compute_uv=False)


def _spectral_value_grad(p: PenaltySpec, U, V, need_grad=True):
    if p.kind == "frobenius":
        UtU, VtV = U.T @ U, V.T @ V
        val = float(np.sum(UtU * VtV))
        if not need_grad:
            return val, None, None
        return val, 2.0 * U @ VtV, 2.0 * V @ UtU
    if p.kind != "smooth_trace":
        raise UnsupportedPenalty(f"penalty {p.kind!r} is not differentiable")
    if not need_grad:
        s = np.linalg.svd(np.linalg.qr(U, mode="r") @ np.linalg.qr(V, mode="r").T, compute_uv=False)
        return float(np.sum(scalar_penalty(p, s))), None, None
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    A, s, Bt = np.linalg.svd(Ru @ Rv.T)
    val = float(np.sum(scalar_penalty(p, s)))
    core = (A * scalar_derivative(p, s)) @ Bt
    return val, Qu @ (core @ Rv), Qv @ (core.T @ Ru)


def _column_product_value_grad(U, V, need_grad=True):
    nu = np.sum(U * U, axis=0)
    nv = np.sum(V * V, axis=0)
    val = float(nu @ nv)
    if not need_grad:
        return val, None, None
    return val, 2.0 * U * nv, 2.0 * V * nu


# ---------------------------------------------------------------------------
# the factored objective over one or more kernel blocks


class _FactoredProblem:
    """Objective and gradient over ``[(U_1, V_1), ..., (U_M, V_M)]``.

    Predictions are ``sum_k diag(X_k U_k V_k^T Y_k^T)`` at the observed pairs
    and the penalty is ``lam * sum_k Omega(U_k V_k^T)``.
    """

    def __init__(self, data: _DataTerm, blocks, lam: float, penalty_fn: Callable):
        self.data = data
        self.blocks = [(np.asarray(xf.X), np.asarray(yf.X)) for xf, yf in blocks]
        self.lam = lam
        self.penalty_fn = penalty_fn
        self.shapes: list[tuple[int, int, int]] = []

    def set_ranks(self, ranks: Sequence[int]):
        self.shapes = [(X.shape[1], Y.shape[1], r) for (X, Y), r in zip(self.blocks, ranks)]

    def pack(self, UVs) -> np.ndarray:
        return np.concatenate([np.concatenate([U.ravel(), V.ravel()]) for U, V in UVs])

    def unpack(self, theta):
        out, pos = [], 0
        for mx, my, r in self.shapes:
            U = theta[pos : pos + mx * r].reshape(mx, r)
            pos += mx * r
            V = theta[pos : pos + my * r].reshape(my, r)
            pos += my * r
            out.append((U, V))
        return out

    def _forward(self, UVs):
        pred = np.zeros(self.data.n)
        cache = []
        for (X, Y), (U, V) in zip(self.blocks, UVs):
            XU, YV = X @ U, Y @ V
            pred += np.einsum("ij,ij->i", XU[self.data.a], YV[self.data.b])
            cache.append((XU, YV))
        return pred, cache

    def value(self, theta) -> float:
        UVs = self.unpack(theta)
        pred, _ = self._forward(UVs)
        f = self.data.value(pred)
        if self.lam:
            f += self.lam * sum(self.penalty_fn(U, V, False)[0] for U, V in UVs)
        return f

    def value_grad(self, theta):
        UVs = self.unpack(theta)
        pred, cache = self._forward(UVs)
        f = self.data.value(pred)
        S = self.data.weights(self.data.derivative(pred))
        St = S.T
        grads = []
        for (X, Y), (U, V), (XU, YV) in zip(self.blocks, UVs, cache):
            gU = X.T @ (S @ YV)
            gV = Y.T @ (St @ XU)
            if self.lam:
                pv, pU, pV = self.penalty_fn(U, V, True)
                f += self.lam * pv
                gU += self.lam * pU
                gV += self.lam * pV
            grads.append((gU, gV))
        return f, self.pack(grads)


def _top_descent_pair(problem: _FactoredProblem, UVs, penalty: PenaltySpec, k: int):
    """Leading singular pair of minus the gradient of ``G`` w.r.t. ``alpha_k``."""
    pred, _ = problem._forward(UVs)
    S = problem.data.weights(problem.data.derivative(pred))
    X, Y = problem.blocks[k]
    G = X.T @ (S @ Y)
    if problem.lam:
        U, V = UVs[k]
        Qu, Ru = np.linalg.qr(U)
        Qv, Rv = np.linalg.qr(V)
        A, s, Bt = np.linalg.svd(Ru @ Rv.T)
        G = G + problem.lam * ((Qu @ A) * scalar_derivative(penalty, s)) @ (Qv @ Bt.T).T
    if min(G.shape) <= 600:
        P, sig, Qt = np.linalg.svd(-G, full_matrices=False)
        return P[:, 0], sig[0], Qt[0]
    P, sig, Qt = svds(-G, k=1, random_state=0)
    return P[:, 0], sig[0], Qt[0]


def _gradient_column(problem: _FactoredProblem, UVs, penalty: PenaltySpec, k: int, t0: float,
                     replace: bool = False):
    """New column pair along the steepest rank-one direction, or None if no descent.

    With ``replace`` the last (smallest) column of block ``k`` is swapped for
    the new one instead of appending, and the result must also improve on
    the current objective.
    """
    f_cur = problem.value(problem.pack(UVs)) if replace else np.inf
    if replace:
        U, V = UVs[k]
        UVs = list(UVs)
        UVs[k] = (U[:, :-1], V[:, :-1])
    u, sig, v = _top_descent_pair(problem, UVs, penalty, k)
    if not sig > 0:
        return None
    shapes = problem.shapes
    problem.set_ranks([U.shape[1] for U, _ in UVs])
    f0 = problem.value(problem.pack(UVs))
    grown = list(UVs)
    problem.set_ranks([U.shape[1] + (j == k) for j, (U, _) in enumerate(UVs)])
    t = t0
    found = None
    while t > 1e-14 * t0:
        c = np.sqrt(t)
        U, V = UVs[k]
        grown[k] = (np.hstack([U, c * u[:, None]]), np.hstack([V, c * v[:, None]]))
        f_new = problem.value(problem.pack(grown))
        if f_new <= f0 - ARMIJO_SLOPE * t * sig:
            if f_new < f_cur:
                found = grown[k]
            break
        t *= BACKTRACK
    problem.shapes = shapes
    return found


def _lbfgs_direction(g, pairs):
    """Two-loop recursion: ``-H g`` for the inverse-Hessian estimate from ``pairs``."""
    q = g.copy()
    alphas = []
    for s_vec, y_vec, rho in reversed(pairs):
        a = rho * float(s_vec @ q)
        q -= a * y_vec
        alphas.append(a)
    s_vec, y_vec, _ = pairs[-1]
    q *= float(s_vec @ y_vec) / float(y_vec @ y_vec)
    for (s_vec, y_vec, rho), a in zip(pairs, reversed(alphas)):
        q += (a - rho * float(y_vec @ q)) * s_vec
    return -q


def _descend(problem: _FactoredProblem, theta, max_iter: int, grad_tol: float, history: list,
             ftol: float = 0.0, direction: str = "bb", memory: int = 10):
    """First-order descent with Armijo backtracking.

    ``direction="bb"`` takes gradient steps with Barzilai-Borwein trial step
    sizes; ``"lbfgs"`` uses limited-memory quasi-Newton directions (falling
    back to the gradient when they are not descent directions).  Every
    accepted step satisfies the Armijo condition, so the objective sequence is
    non-increasing.  Stops when ``|g| <= grad_tol`` or, with ``ftol > 0``,
    when the objective fell by less than ``ftol`` (relative) over the last 10
    iterations.
    """
    f, g = problem.value_grad(theta)
    if not np.isfinite(f):
        raise NumericalFailure(f"objective is {f} at the starting point")
    history.append(f)
    step = 1.0
    prev = None
    pairs: list = []
    it = 0
    converged = False
    stall = 0
    while it < max_iter:
        gnorm2 = float(g @ g)
        if np.sqrt(gnorm2) <= grad_tol:
            converged = True
            break
        if prev is not None:
            s_vec, y_vec = theta - prev[0], g - prev[1]
            sy = float(s_vec @ y_vec)
            if direction == "lbfgs":
                if sy > 1e-12 * np.sqrt(float(s_vec @ s_vec) * float(y_vec @ y_vec)):
                    pairs.append((s_vec, y_vec, 1.0 / sy))
                    if len(pairs) > memory:
                        pairs.pop(0)
            elif sy > 0:
                step = float(s_vec @ s_vec) / sy
            else:
                step = min(step * 4.0, 1e10)
        p = -g
        if direction == "lbfgs" and pairs:
            p = _lbfgs_direction(g, pairs)
            if not float(p @ g) < 0:
                pairs.clear()
                p = -g
        slope = float(p @ g)
        if direction == "lbfgs":
            # unit quasi-Newton step, or a gradient step of length ~1/|g| when no model yet
            step = 1.0 if pairs else min(1.0, 1.0 / np.sqrt(gnorm2))
        step = min(max(step, 1e-12), 1e10)
        while True:
            trial = theta + step * p
            f_trial = problem.value(trial)
            if np.isfinite(f_trial) and f_trial <= f + ARMIJO_SLOPE * step * slope:
                break
            step *= BACKTRACK
            if step < 1e-20:
                break
        if step < 1e-20:
            if direction == "lbfgs" and pairs:
                # stale curvature model: restart from a gradient step
                pairs.clear()
                prev = None
                continue
            # no representable descent step left: we are at round-off level
            converged = np.sqrt(gnorm2) <= 1e3 * grad_tol
            break
        prev = (theta, g)
        theta = trial
        f_grad, g = problem.value_grad(theta)
        if not (np.isfinite(f_grad) and np.all(np.isfinite(g))):
            raise NumericalFailure(
                f"objective became {f_grad} at iteration {it} (step {step:.3e}, |g| {np.sqrt(gnorm2):.3e})"
            )
        # the value-only path rounds differently; record the Armijo-checked value
        f_new = f_trial
        if f_new > f:
            raise AssertionError(f"descent violated: {f_new!r} > {f!r}")
        stall = stall + 1 if f - f_new <= 1e-15 * max(abs(f), 1.0) else 0
        f = f_new
        history.append(f)
        it += 1
        if stall >= 10:
            converged = True
            break
        if ftol > 0 and it >= 10 and history[-11] - f <= ftol * max(abs(f), 1e-12):
            converged = True
            break
    return theta, f, it, converged


def _balanced(U, V):
    """Same product ``U V^T`` with both factors carrying ``sqrt(sigma)``."""
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    A, s, Bt = np.linalg.svd(Ru @ Rv.T)
    root = np.sqrt(s)
    return (Qu @ A) * root, (Qv @ Bt.T) * root, s


def _data_scale(d: RatingsDataset, offset: float) -> float:
    rms = float(np.sqrt(np.mean((d.ratings - offset) ** 2)))
    return rms if rms > 0 else 1.0


def _solve_blocks(d: RatingsDataset, blocks, cfg: SolveConfig, offset: float, init=None):
    """Rank-escalating descent over one or more factor blocks.

    ``init`` optionally gives starting ``(U, V)`` per block (warm start).
    Returns the per-block ``(U, V)`` and a :class:`SolveReport`.
    """
    t0 = time.perf_counter()
    penalty = cfg.resolve_penalty(d)
    if not penalty.smooth:
        raise UnsupportedPenalty(
            f"low-rank descent needs a smooth penalty (smooth_trace or frobenius), got {penalty.kind!r}"
        )
    data = _DataTerm(d, cfg.loss, offset)
    problem = _FactoredProblem(data, blocks, cfg.lam, lambda U, V, g: _spectral_value_grad(penalty, U, V, g))
    caps = [min(X.shape[1], Y.shape[1]) for X, Y in problem.blocks]
    rmax = [min(c, cfg.rank_max) if cfg.rank_max is not None else c for c in caps]
    r0 = [min(cfg.rank0, c) for c in rmax]
    floor = cfg.floor * penalty.eps if penalty.kind == "smooth_trace" else 0.0

    rng = np.random.default_rng(cfg.seed)
    scale = cfg.init_scale * _data_scale(d, offset)
    if init is None:
        UVs = [
            (rng.uniform(-scale, scale, (X.shape[1], r)), rng.uniform(-scale, scale, (Y.shape[1], r)))
            for (X, Y), r in zip(problem.blocks, r0)
        ]
    else:
        UVs = []
        for (X, Y), (U, V), cap in zip(problem.blocks, init, rmax):
            U, V = np.array(U, dtype=float)[:, :cap], np.array(V, dtype=float)[:, :cap]
            if U.shape[0] != X.shape[1] or V.shape[0] != Y.shape[1]:
                raise ValueError("warm start does not match the square roots")
            # a small kick keeps an all-zero start away from the saddle at 0
            UVs.append((U + rng.uniform(-scale, scale, U.shape), V + rng.uniform(-scale, scale, V.shape)))
    report = SolveReport(objective=np.nan, rank=0)
    active = [True] * len(UVs)
    deficient = [False] * len(UVs)
    escapes = 0
    while True:
        problem.set_ranks([U.shape[1] for U, _ in UVs])
        theta, f, its, conv = _descend(
            problem, problem.pack(UVs), cfg.max_iter, cfg.grad_tol, report.history, cfg.ftol,
            cfg.direction,
        )
        UVs = problem.unpack(theta)
        report.stage_ranks.append(max(U.shape[1] for U, _ in UVs))
        report.stage_iterations.append(its)
        report.converged = conv
        grow = []
        retry = False
        for k, (U, V) in enumerate(UVs):
            U, V, s = _balanced(U, V)
            UVs[k] = (U, V)
            deficient[k] = bool(s[0] == 0.0 or s[-1] <= max(cfg.rank_tol * s[0], floor))
            if deficient[k] and cfg.escalation == "gradient" and escapes < MAX_ESCAPES:
                # a tiny column may sit on a saddle; swap it for the steepest direction
                swapped = _gradient_column(problem, UVs, penalty, k, _data_scale(d, offset), replace=True)
                if swapped is not None:
                    escapes += 1
                    UVs[k] = swapped
                    deficient[k] = False
                    retry = True
                    continue
            # at full width every alpha is reachable, so a stationary point is optimal
            if deficient[k] or U.shape[1] >= caps[k]:
                active[k] = False
            elif U.shape[1] < rmax[k]:
                grow.append(k)
        _log.debug("stage rank %s: f=%.10g its=%d grow=%s", report.stage_ranks[-1], f, its, grow)
        if not grow and not retry:
            break
        for k in grow:
            U, V = UVs[k]
            new = None
            if cfg.escalation == "gradient":
                new = _gradient_column(problem, UVs, penalty, k, _data_scale(d, offset))
            if new is None:
                new = (
                    np.hstack([U, rng.uniform(-scale, scale, (U.shape[0], 1))]),
                    np.hstack([V, rng.uniform(-scale, scale, (V.shape[0], 1))]),
                )
            UVs[k] = new
    report.rank_deficient = all(deficient)
    report.certified = report.converged and not any(active)
    report.hit_rank_max = any(active)
    report.extra["block_ranks"] = [U.shape[1] for U, _ in UVs]
    if report.hit_rank_max:
        warnings.warn(
            f"rank escalation stopped at rank_max={max(rmax)} without a rank-deficient minimum",
            RankCapWarning,
            stacklevel=3,
        )
    if cfg.prune and floor > 0:
        UVs = [_prune(U, V, floor) for U, V in UVs]
    problem.set_ranks([U.shape[1] for U, _ in UVs])
    report.objective = problem.value(problem.pack(UVs))
    report.rank = max(_numerical_rank(factored_spectrum(U, V)) for U, V in UVs)
    report.wall_time = time.perf_counter() - t0
    return UVs, report


def _numerical_rank(s) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-12 * s[0]))


def _prune(U, V, floor: float):
    U, V, s = _balanced(U, V)
    keep = s > floor
    if not np.any(keep):
        return np.zeros((U.shape[0], 1)), np.zeros((V.shape[0], 1))
    return U[:, keep], V[:, keep]


# ---------------------------------------------------------------------------
# public API


def _as_coefficients(coeffs):
    if isinstance(coeffs, OperatorModel):
        return coeffs.coefficients()
    if isinstance(coeffs, tuple):
        U, V = coeffs
        return np.asarray(U) @ np.asarray(V).T
    return np.asarray(coeffs, dtype=float)


def objective(coeffs, d: RatingsDataset, xf: GramFactor, yf: GramFactor, cfg: SolveConfig,
              offset: float | None = None, penalty: PenaltySpec | None = None) -> float:
    """``(1/N) sum_i psi_i(prediction_i) + lam * Omega(alpha)``.

    ``coeffs`` is a dense ``alpha``, a pair ``(U, V)`` or an
    :class:`OperatorModel`; factored penalties use the QR/core-SVD spectrum.
    ``offset`` defaults to the model's offset, else to ``cfg.offset(d)``.
    """
    _check_factors(d, xf, yf)
    penalty = penalty or cfg.resolve_penalty(d)
    if offset is None:
        offset = coeffs.offset if isinstance(coeffs, OperatorModel) else cfg.offset(d)
    if isinstance(coeffs, tuple):
        U, V = (np.asarray(M, dtype=float) for M in coeffs)
        if U.shape[0] != xf.m or V.shape[0] != yf.m:
            raise ValueError("factor shapes do not match the square roots")
        s = factored_spectrum(U, V)
        XU, YV = xf.X @ U, yf.X @ V
        pred = np.einsum("ij,ij->i", XU[d.users], YV[d.items])
    else:
        alpha = _as_coefficients(coeffs)
        if alpha.shape != (xf.m, yf.m):
            raise ValueError(f"alpha has shape {alpha.shape}, expected {(xf.m, yf.m)}")
        s = np.linalg.svd(alpha, compute_uv=False)
        pred = np.einsum("ij,ij->i", (xf.X @ alpha)[d.users], yf.X[d.items])
    spec = LossSpec(cfg.loss, d.ratings - offset)
    risk = float(np.mean(loss_eval(spec, pred)))
    if cfg.lam == 0:
        return risk
    return risk + cfg.lam * penalty_eval(penalty, s)


def gradient(U, V, d: RatingsDataset, xf: GramFactor, yf: GramFactor, cfg: SolveConfig,
             offset: float | None = None):
    """Gradient of the factored objective ``H(U, V) = G(U V^T)``.

    Returns ``(dU, dV) = (grad_G V, grad_G^T U)`` where ``grad_G`` combines
    the loss residuals with the spectral gradient ``P diag(s'(sigma)) Q^T``.
    """
    _check_factors(d, xf, yf)
    penalty = cfg.resolve_penalty(d)
    if not penalty.smooth:
        raise UnsupportedPenalty(f"penalty {penalty.kind!r} is not differentiable")
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    offset = cfg.offset(d) if offset is None else offset
    problem = _FactoredProblem(
        _DataTerm(d, cfg.loss, offset), [(xf, yf)], cfg.lam,
        lambda U_, V_, g: _spectral_value_grad(penalty, U_, V_, g),
    )
    problem.set_ranks([U.shape[1]])
    _, g = problem.value_grad(problem.pack([(U, V)]))
    (dU, dV), = problem.unpack(g)
    return dU, dV


def solve_lowrank(d: RatingsDataset, xf: GramFactor, yf: GramFactor, cfg: SolveConfig,
                  init: OperatorModel | None = None):
    """Minimize the smoothed spectral objective with rank escalation.

    Returns ``(OperatorModel, SolveReport)``.  The model stores ``(U, V)`` and
    the training offset.  With ``cfg.prune`` singular values below the
    smoothing floor are dropped from the returned factors.  A factored
    ``init`` model (same square roots) is used as a warm start.
    """
    _check_factors(d, xf, yf)
    offset = cfg.offset(d)
    warm = None
    if init is not None:
        if not init.factored:
            raise ValueError("warm start needs a factored model")
        warm = [(init.U, init.V)]
    (UV,), report = _solve_blocks(d, [(xf, yf)], cfg, offset, init=warm)
    model = OperatorModel(xf, yf, U=UV[0], V=UV[1], offset=offset)
    return model, report


def solve_frob_lowrank(d: RatingsDataset, xf: GramFactor, yf: GramFactor, r: int, lam: float,
                       restarts: int = 5, seed: int = 0, max_iter: int = 5000,
                       grad_tol: float = 1e-6, init_scale: float = 0.1, center: bool = True,
                       loss: str = "squared", ftol: float = 0.0, direction: str = "bb"):
    """Fixed-rank factorization penalized by ``lam * sum_k |U[:,k]|^2 |V[:,k]|^2``.

    This problem can have spurious local minima, so ``restarts`` random
    initializations are run and the lowest objective is kept.
    """
    _check_factors(d, xf, yf)
    if not 1 <= r <= min(xf.m, yf.m):
        raise ValueError(f"rank {r} outside [1, {min(xf.m, yf.m)}]")
    if restarts < 1:
        raise ValueError("need at least one restart")
    t0 = time.perf_counter()
    offset = float(np.mean(d.ratings)) if center and loss == "squared" else 0.0
    problem = _FactoredProblem(_DataTerm(d, loss, offset), [(xf, yf)], lam, _column_product_value_grad)
    problem.set_ranks([r])
    scale = init_scale * np.sqrt(_data_scale(d, offset))
    best = None
    finals = []
    for rs in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(rs)
        theta0 = problem.pack([(rng.normal(0, scale, (xf.m, r)), rng.normal(0, scale, (yf.m, r)))])
        history: list[float] = []
        theta, f, its, conv = _descend(problem, theta0, max_iter, grad_tol, history, ftol, direction)
        finals.append(f)
        if best is None or f < best[1]:
            best = (theta, f, its, conv, history)
    theta, f, its, conv, history = best
    ((U, V),) = problem.unpack(theta)
    model = OperatorModel(xf, yf, U=U, V=V, offset=offset)
    report = SolveReport(
        objective=f, rank=_numerical_rank(factored_spectrum(U, V)), stage_ranks=[r],
        stage_iterations=[its], history=history, converged=conv,
        wall_time=time.perf_counter() - t0, extra={"restart_objectives": finals},
    )
    return model, report


def _spectral_norm(B) -> float:
    if min(B.shape) <= 600:
        return float(np.linalg.norm(B, 2)) if B.size else 0.0
    return float(svds(B, k=1, return_singular_vectors=False)[0])


def dual_objective(beta, d: RatingsDataset, blocks, lam: float, penalty: PenaltySpec,
                   loss: str = "squared", offset: float = 0.0) -> float:
    """Dual value ``-sum_i phi_i*(beta_i) - lam * sum_k Omega*(-(1/lam) X_k^T Diag(beta) Y_k)``.

    ``phi_i = psi_i / N`` is the per-sample share of the empirical risk.
    """
    beta = np.asarray(beta, dtype=float)
    n = len(d)
    spec = LossSpec(loss, d.ratings - offset)
    val = -float(np.sum(loss_conjugate(spec, n * beta))) / n
    data = _DataTerm(d, loss, offset)
    S = data.weights(beta)
    for xf, yf in blocks:
        B = xf.X.T @ (S @ yf.X)
        if penalty.kind == "trace":
            if _spectral_norm(B) > lam * (1 + 1e-12):
                return -np.inf
        else:
            s = np.linalg.svd(B, compute_uv=False)
            val -= lam * float(np.sum(scalar_conjugate(penalty, s / lam)))
    return val


def feasible_dual(pred, d: RatingsDataset, blocks, lam: float, penalty: PenaltySpec,
                  loss: str = "squared", offset: float = 0.0) -> np.ndarray:
    """Dual candidate ``beta_i = psi_i'(v_i) / N``, scaled into the dual domain."""
    spec = LossSpec(loss, d.ratings - offset)
    beta = loss_grad(spec, pred) / len(d)
    if penalty.kind in ("trace", "smooth_trace"):
        data = _DataTerm(d, loss, offset)
        S = data.weights(beta)
        worst = max(_spectral_norm(xf.X.T @ (S @ yf.X)) for xf, yf in blocks)
        if worst > lam:
            beta = beta * (lam / worst)
    return beta


def duality_gap(m, d: RatingsDataset, cfg: SolveConfig, penalty: PenaltySpec | None = None) -> float:
    """Primal minus dual objective at the dual point built from ``m``'s predictions.

    ``m`` is an :class:`OperatorModel` or a list of them (multiple kernels,
    predictions summed).  Supported penalties: trace, frobenius, smooth_trace.
    """
    models = list(m) if isinstance(m, (list, tuple)) else [m]
    penalty = penalty or cfg.resolve_penalty(d)
    if penalty.kind not in ("trace", "frobenius", "smooth_trace"):
        raise UnsupportedPenalty(f"no closed-form conjugate for {penalty.kind!r}")
    if cfg.lam <= 0:
        raise ValueError("duality gap needs lam > 0")
    if cfg.loss == "logistic" and any(mm.offset for mm in models):
        raise ValueError("logistic loss does not use a rating offset")
    offset = sum(mm.offset for mm in models)
    pred = sum(predict_all(mm, d) for mm in models) - offset
    spec = LossSpec(cfg.loss, d.ratings - offset)
    primal = float(np.mean(loss_eval(spec, pred)))
    primal += cfg.lam * sum(
        penalty_eval(penalty, np.linalg.svd(mm.coefficients(), compute_uv=False)) for mm in models
    )
    blocks = [(mm.xfactor, mm.yfactor) for mm in models]
    beta = feasible_dual(pred, d, blocks, cfg.lam, penalty, cfg.loss, offset)
    return primal - dual_objective(beta, d, blocks, cfg.lam, penalty, cfg.loss, offset)
