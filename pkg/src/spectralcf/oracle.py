"""Brute-force reference computations for tests and certification.

Nothing here shares code paths with :mod:`spectralcf.solver`: the convex
solver works on dense coefficient matrices with gathered design rows, and it
certifies itself with its own duality-gap computation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import GramFactor, factor_gram
from .model import RatingsDataset

__all__ = [
    "OracleResult",
    "convex_solve_trace",
    "convex_solve_blocks",
    "psd_sqrt",
    "representer_equivalence",
    "representer_equivalence_check",
    "numeric_conjugate",
    "projection_lemma_check",
    "finite_difference_gradient",
    "least_squares_value",
]

MAX_SIZE = 2500


@dataclass
class OracleResult:
    value: float
    alphas: list[np.ndarray]
    predictions: np.ndarray
    iterations: int
    converged: bool
    gap: float = np.nan
    history: list[float] = field(default_factory=list)

    @property
    def alpha(self) -> np.ndarray:
        return self.alphas[0]


def _svt(A: np.ndarray, tau: float) -> np.ndarray:
    P, s, Qt = np.linalg.svd(A, full_matrices=False)
    return (P * np.maximum(s - tau, 0.0)) @ Qt


def convex_solve_blocks(d: RatingsDataset, blocks, lam: float, offset: float = 0.0,
                        max_iter: int = 200000, rel_gap: float = 1e-6) -> OracleResult:
    """Accelerated proximal gradient for squared loss + trace norms of several blocks.

    Minimizes ``(1/2N) sum_i (t_i - offset - sum_k x_ki^T alpha_k y_ki)^2
    + lam * sum_k |alpha_k|_*`` with singular-value soft-thresholding.
    """
    Xa = [np.asarray(xf.X)[d.users] for xf, _ in blocks]
    Yb = [np.asarray(yf.X)[d.items] for _, yf in blocks]
    size = sum(x.shape[1] * y.shape[1] for x, y in zip(Xa, Yb))
    if size > MAX_SIZE:
        raise ValueError(f"oracle limited to {MAX_SIZE} coefficients, got {size}")
    t = np.asarray(d.ratings, dtype=float) - offset
    n = len(t)

    def predict(alphas):
        return sum(np.sum((x @ a) * y, axis=1) for x, a, y in zip(Xa, alphas, Yb))

    def smooth_grad(alphas):
        r = (predict(alphas) - t) / n
        return [x.T @ (r[:, None] * y) for x, y in zip(Xa, Yb)]

    def total(alphas):
        res = predict(alphas) - t
        val = 0.5 * float(res @ res) / n
        if lam:
            val += lam * sum(np.linalg.svd(a, compute_uv=False).sum() for a in alphas)
        return val

    def gap(alphas, val):
        if lam == 0:
            return np.nan
        beta = (predict(alphas) - t) / n
        worst = max(np.linalg.norm(x.T @ (beta[:, None] * y), 2) for x, y in zip(Xa, Yb))
        if worst > lam:
            beta = beta * (lam / worst)
        dual = -float(np.sum(0.5 * n * beta**2 + beta * t))
        return val - dual

    # Lipschitz constant of the smooth part: top eigenvalue of A^T A / n
    rng = np.random.default_rng(0)
    z = [rng.normal(size=(x.shape[1], y.shape[1])) for x, y in zip(Xa, Yb)]
    L = 0.0
    for _ in range(500):
        nz = np.sqrt(sum(float(np.sum(a * a)) for a in z))
        z = [a / nz for a in z]
        pz = predict(z)
        w = [x.T @ (pz[:, None] * y) / n for x, y in zip(Xa, Yb)]
        L_new = float(sum(np.sum(a * b) for a, b in zip(w, z)))
        z = w
        if abs(L_new - L) <= 1e-12 * L_new:
            L = L_new
            break
        L = L_new
    step = 1.0 / (L * 1.01) if L > 0 else 1.0

    alphas = [np.zeros((x.shape[1], y.shape[1])) for x, y in zip(Xa, Yb)]
    yk = [a.copy() for a in alphas]
    tk = 1.0
    f = total(alphas)
    history = [f]
    converged = False
    g = np.nan
    it = 0
    while it < max_iter:
        it += 1
        grads = smooth_grad(yk)
        new = [_svt(y_ - step * gr, step * lam) for y_, gr in zip(yk, grads)]
        f_new = total(new)
        if f_new > f:
            # function-value restart of the momentum
            tk = 1.0
            yk = [a.copy() for a in alphas]
            grads = smooth_grad(yk)
            new = [_svt(y_ - step * gr, step * lam) for y_, gr in zip(yk, grads)]
            f_new = total(new)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        yk = [a + ((tk - 1.0) / t_next) * (a - b) for a, b in zip(new, alphas)]
        alphas, tk = new, t_next
        f = f_new
        history.append(f)
        if len(history) > 10:
            window = np.abs(np.diff(history[-11:]))
            if np.all(window <= 1e-10 * max(abs(f), 1e-300)):
                converged = True
        if it % 50 == 0 or converged:
            g = gap(alphas, f)
            certified = (lam == 0 and converged) or (lam > 0 and g <= rel_gap * max(abs(f), 1e-12))
            if certified and converged:
                break
            converged = False
    return OracleResult(
        value=f, alphas=alphas, predictions=predict(alphas) + offset, iterations=it,
        converged=converged, gap=g, history=history,
    )


def convex_solve_trace(d: RatingsDataset, xf: GramFactor, yf: GramFactor, lam: float,
                       offset: float = 0.0, **kw) -> OracleResult:
    """Certified optimum of the trace-norm problem in one kernel pair."""
    return convex_solve_blocks(d, [(xf, yf)], lam, offset=offset, **kw)


def psd_sqrt(K) -> np.ndarray:
    """Symmetric square root ``K^{1/2}`` (n x n, not reduced)."""
    w, V = np.linalg.eigh(0.5 * (K + K.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def representer_equivalence(d: RatingsDataset, K, G, lam: float, rank: int | None = None,
                            restarts: int = 20, seed: int = 0) -> dict:
    """Solve once in the full n_X x n_Y parameterization, once in the reduced one.

    The full problem uses the symmetric roots ``K^{1/2}`` and ``G^{1/2}`` as
    explicit features (so the operator is an n_X x n_Y matrix); the reduced
    problem uses pivoted-Cholesky roots with their own, smaller dimension.
    Without ``rank`` both solves are certified trace-norm optima; with
    ``rank`` the Frobenius+rank problem is solved by restarted low-rank
    descent in both parameterizations.
    """
    K = np.asarray(K, dtype=float)
    G = np.asarray(G, dtype=float)
    if K.shape[0] * G.shape[0] > MAX_SIZE:
        raise ValueError(f"full parameterization limited to {MAX_SIZE} entries")
    full = (GramFactor(psd_sqrt(K)), GramFactor(psd_sqrt(G)))
    reduced = (factor_gram(K, method="cholesky"), factor_gram(G, method="cholesky"))
    if rank is None:
        a = convex_solve_trace(d, *full, lam)
        b = convex_solve_trace(d, *reduced, lam)
        fa, fb, pa, pb = a.value, b.value, a.predictions, b.predictions
    else:
        from .model import predict_all
        from .penalties import PenaltySpec
        from .solver import SolveConfig, solve_lowrank

        def best(xf, yf):
            r = min(rank, xf.m, yf.m)
            out = None
            for s in range(restarts):
                cfg = SolveConfig(lam=lam, penalty=PenaltySpec("frobenius"), rank0=r, rank_max=r,
                                  center=False, seed=seed + s, init_scale=0.3, grad_tol=1e-9,
                                  max_iter=20000)
                import warnings

                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    model, rep = solve_lowrank(d, xf, yf, cfg)
                if out is None or rep.objective < out[0]:
                    out = (rep.objective, predict_all(model, d))
            return out

        fa, pa = best(*full)
        fb, pb = best(*reduced)
    return {
        "full_objective": fa,
        "reduced_objective": fb,
        "objective_rel_diff": abs(fa - fb) / max(abs(fa), abs(fb), 1e-300),
        "prediction_max_diff": float(np.max(np.abs(pa - pb))),
        "m_x": reduced[0].m,
        "m_y": reduced[1].m,
    }


def representer_equivalence_check(d: RatingsDataset, K, G, lam: float, rank: int | None = None,
                                  obj_tol: float | None = None, pred_tol: float = 1e-4) -> bool:
    if obj_tol is None:
        obj_tol = 1e-5 if rank is None else 1e-3
    res = representer_equivalence(d, K, G, lam, rank=rank)
    return res["objective_rel_diff"] <= obj_tol and (
        rank is not None or res["prediction_max_diff"] <= pred_tol
    )


def numeric_conjugate(f, beta: float, grid) -> float:
    """Grid maximum of ``beta * v - f(v)``."""
    grid = np.asarray(grid, dtype=float)
    return float(np.max(beta * grid - f(grid)))


def projection_lemma_check(F, dim: int, seed=None, projection=None, slack: float = 1e-10) -> bool:
    """Check ``sigma_i(P F) <= sigma_i(F)`` for an orthogonal projection ``P``.

    ``P`` projects onto a random ``dim``-dimensional subspace unless given.
    """
    F = np.asarray(F, dtype=float)
    if projection is None:
        if not 0 <= dim <= F.shape[0]:
            raise ValueError("subspace dimension exceeds the row count")
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.normal(size=(F.shape[0], dim)))
        projection = Q @ Q.T
    s = np.linalg.svd(F, compute_uv=False)
    sp_ = np.linalg.svd(projection @ F, compute_uv=False)
    return bool(np.all(sp_ <= s + slack))


def finite_difference_gradient(f, x, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        old = flat[i]
        step = h * max(1.0, abs(old))
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def least_squares_value(d: RatingsDataset, xf: GramFactor, yf: GramFactor, offset: float = 0.0) -> float:
    """Smallest ``(1/2N)|t - A vec(alpha)|^2`` over unconstrained ``alpha``."""
    Xa = np.asarray(xf.X)[d.users]
    Yb = np.asarray(yf.X)[d.items]
    A = np.einsum("ij,ik->ijk", Xa, Yb).reshape(len(d), -1)
    t = d.ratings - offset
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    res = A @ coef - t
    return 0.5 * float(res @ res) / len(d)
