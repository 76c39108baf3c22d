"""Oracle cross-checks runnable from the command line (``spectralcf certify``).

Each check returns ``(name, passed, detail)``.  The instances are small
enough for the dense reference solvers in :mod:`spectralcf.oracle`.
"""
from __future__ import annotations

import warnings

import numpy as np

from .kernels import KernelSpec, build_gram, factor_gram
from .losses import LossSpec, loss_conjugate, loss_eval
from .mkl import kron_invariance_check
from .model import RatingsDataset
from .oracle import (
    convex_solve_trace,
    finite_difference_gradient,
    numeric_conjugate,
    projection_lemma_check,
    representer_equivalence,
)
from .penalties import PenaltySpec, scalar_conjugate, scalar_penalty
from .solver import RankCapWarning, SolveConfig, duality_gap, gradient, objective, solve_lowrank

__all__ = ["random_instance", "run_all"]


def random_instance(rng, n_x: int, n_y: int, n_obs: int, eta: float = 0.5, zeta: float = 0.5,
                    d_attr: int = 3, noise: float = 0.1):
    """Ratings from a random low-rank matrix, with mixed Dirac/linear kernels.

    Returns ``(dataset, K, G)``.
    """
    n_obs = min(n_obs, n_x * n_y)
    pairs = rng.choice(n_x * n_y, size=n_obs, replace=False)
    a, b = pairs // n_y, pairs % n_y
    truth = rng.normal(size=(n_x, 2)) @ rng.normal(size=(2, n_y))
    t = truth[a, b] + noise * rng.normal(size=n_obs)
    d = RatingsDataset(a, b, t, n_x, n_y)
    K = build_gram(KernelSpec("user", eta), n_x, rng.normal(size=(n_x, d_attr)))
    G = build_gram(KernelSpec("object", zeta), n_y, rng.normal(size=(n_y, d_attr)))
    return d, K, G


def check_representer(seed: int = 0, trials: int = 20):
    rng = np.random.default_rng(seed)
    worst_obj = worst_pred = 0.0
    for _ in range(trials):
        n_x, n_y = rng.integers(4, 11, size=2)
        d, K, G = random_instance(rng, n_x, n_y, int(rng.integers(10, 41)),
                                  eta=float(rng.uniform()), zeta=float(rng.uniform()))
        res = representer_equivalence(d, K, G, lam=float(rng.uniform(0.01, 0.1)))
        worst_obj = max(worst_obj, res["objective_rel_diff"])
        worst_pred = max(worst_pred, res["prediction_max_diff"])
    ok = worst_obj <= 1e-5 and worst_pred <= 1e-4
    return "representer equivalence", ok, f"max rel objective diff {worst_obj:.2e}, max prediction diff {worst_pred:.2e}"


def check_projection(seed: int = 0, trials: int = 100):
    rng = np.random.default_rng(seed)
    passed = sum(
        projection_lemma_check(rng.normal(size=(10, 10)), int(rng.integers(0, 11)), seed=int(rng.integers(2**31)))
        for _ in range(trials)
    )
    return "projection lemma", passed == trials, f"{passed}/{trials} trials"


def check_gradients(seed: int = 0, trials: int = 20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(trials):
        d, K, G = random_instance(rng, 6, 5, 18)
        xf, yf = factor_gram(K), factor_gram(G)
        kind = ("smooth_trace", "frobenius")[i % 2]
        pen = PenaltySpec(kind, eps=0.1 if kind == "smooth_trace" else None)
        cfg = SolveConfig(lam=0.05, penalty=pen)
        r = 3
        U, V = rng.normal(size=(xf.m, r)), rng.normal(size=(yf.m, r))
        dU, dV = gradient(U, V, d, xf, yf, cfg)
        fU = finite_difference_gradient(lambda M: objective((M, V), d, xf, yf, cfg), U)
        fV = finite_difference_gradient(lambda M: objective((U, M), d, xf, yf, cfg), V)
        num = np.concatenate([fU.ravel(), fV.ravel()])
        ana = np.concatenate([dU.ravel(), dV.ravel()])
        worst = max(worst, np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-12))
    return "gradient vs finite differences", worst <= 1e-5, f"max relative error {worst:.2e}"


def check_conjugates():
    grid = np.linspace(-60, 60, 1200001)
    worst = 0.0
    for t in (-1.0, 1.0, 2.5):
        for beta in (-0.7, -0.3, 0.4):
            sq = LossSpec("squared", [t])
            worst = max(worst, abs(numeric_conjugate(lambda v: loss_eval(sq, v), beta, grid)
                                   - np.asarray(loss_conjugate(sq, beta)).item()))
    for t in (-1.0, 1.0):
        lg = LossSpec("logistic", [t])
        for u in (0.1, 0.5, 0.9):
            beta = -u * t
            worst = max(worst, abs(numeric_conjugate(lambda v: loss_eval(lg, v), beta, grid)
                                   - np.asarray(loss_conjugate(lg, beta)).item()))
    sgrid = np.linspace(-30, 30, 600001)
    for p in (PenaltySpec("trace"), PenaltySpec("frobenius"), PenaltySpec("smooth_trace", eps=0.1)):
        for tau in (-0.9, -0.2, 0.5, 0.95):
            worst = max(worst, abs(numeric_conjugate(lambda x: scalar_penalty(p, x), tau, sgrid)
                                   - float(scalar_conjugate(p, tau))))
    return "closed-form conjugates", worst <= 1e-3, f"max deviation from grid oracle {worst:.2e}"


def check_rank_escalation(seed: int = 0, trials: int = 20):
    rng = np.random.default_rng(seed)
    worst_gap = worst_obj = 0.0
    certified = 0
    for _ in range(trials):
        n_x, n_y = rng.integers(5, 21, size=2)
        d, K, G = random_instance(rng, n_x, n_y, int(rng.integers(20, 61)),
                                  eta=float(rng.uniform()), zeta=float(rng.uniform()))
        xf, yf = factor_gram(K), factor_gram(G)
        lam = float(rng.uniform(0.01, 0.05))
        cfg = SolveConfig(lam=lam, eps=1e-4, grad_tol=1e-9, max_iter=20000, center=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankCapWarning)
            model, rep = solve_lowrank(d, xf, yf, cfg)
        if not rep.rank_deficient:
            continue
        certified += 1
        trace_cfg = SolveConfig(lam=lam, penalty=PenaltySpec("trace"), center=False)
        primal = objective(model, d, xf, yf, trace_cfg)
        worst_gap = max(worst_gap, duality_gap(model, d, trace_cfg) / max(abs(primal), 1e-12))
        ref = convex_solve_trace(d, xf, yf, lam).value
        worst_obj = max(worst_obj, abs(primal - ref) / max(abs(ref), 1e-12))
    ok = certified > 0 and worst_gap <= 1e-3 and worst_obj <= 1e-4
    return ("rank escalation optimality", ok,
            f"{certified}/{trials} rank-deficient; max rel gap {worst_gap:.2e}, max rel diff to oracle {worst_obj:.2e}")


def check_kron(seed: int = 0, trials: int = 20):
    rng = np.random.default_rng(seed)
    passed = 0
    for i in range(trials):
        n = 8
        A = rng.normal(size=(n, 3 if i % 2 else n))
        C = rng.normal(size=(n, n))
        passed += kron_invariance_check(A @ A.T, C @ C.T, rng.normal(size=(n, n)))
    return "Kronecker invariance", passed == trials, f"{passed}/{trials} trials"


def check_solver_roots(seed: int = 0, trials: int = 5):
    """Same objective and predictions from two different square roots."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d, K, G = random_instance(rng, 8, 7, 30)
        res = []
        for method in ("eigh", "cholesky"):
            xf, yf = factor_gram(K, method=method), factor_gram(G, method=method)
            ref = convex_solve_trace(d, xf, yf, 0.05)
            res.append((ref.value, ref.predictions))
        worst = max(worst, abs(res[0][0] - res[1][0]) / abs(res[0][0]),
                    float(np.max(np.abs(res[0][1] - res[1][1]))))
    return "square-root invariance of the optimum", worst <= 1e-6, f"max deviation {worst:.2e}"


def run_all(seed: int = 0, quick: bool = False):
    n = 5 if quick else 20
    return [
        check_representer(seed, n),
        check_projection(seed, 100),
        check_gradients(seed, n),
        check_conjugates(),
        check_rank_escalation(seed, n),
        check_kron(seed, n),
        check_solver_roots(seed, 3 if quick else 5),
    ]

