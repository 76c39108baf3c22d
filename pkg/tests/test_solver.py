import warnings

import numpy as np
import pytest

from spectralcf.kernels import GramFactor
from spectralcf.model import OperatorModel, predict_all
from spectralcf.oracle import convex_solve_trace, finite_difference_gradient, least_squares_value
from spectralcf.penalties import PenaltySpec
from spectralcf.solver import (
    RankCapWarning,
    SolveConfig,
    UnsupportedPenalty,
    duality_gap,
    factored_spectrum,
    gradient,
    objective,
    solve_frob_lowrank,
    solve_lowrank,
)

from conftest import small_problem

TRACE = PenaltySpec("trace")
FROB = PenaltySpec("frobenius")


def test_objective_examples():
    d, xf, yf, _, _ = small_problem(seed=1)
    cfg = SolveConfig(lam=0.3, center=False)
    zero = np.zeros((xf.m, yf.m))
    assert objective(zero, d, xf, yf, cfg) == pytest.approx(0.5 * np.mean(d.ratings**2), rel=1e-14)
    rng = np.random.default_rng(0)
    alpha = rng.normal(size=(xf.m, yf.m))
    pure = objective(alpha, d, xf, yf, SolveConfig(lam=0.0, center=False))
    pred = np.einsum("ij,ij->i", (xf.X @ alpha)[d.users], yf.X[d.items])
    assert pure == pytest.approx(0.5 * np.mean((d.ratings - pred) ** 2), rel=1e-12)


@pytest.mark.parametrize("penalty", [TRACE, FROB, PenaltySpec("smooth_trace", eps=0.05)])
def test_factored_objective_matches_dense(penalty):
    d, xf, yf, _, _ = small_problem(seed=2)
    rng = np.random.default_rng(2)
    U, V = rng.normal(size=(xf.m, 3)), rng.normal(size=(yf.m, 3))
    cfg = SolveConfig(lam=0.07, penalty=penalty)
    assert objective((U, V), d, xf, yf, cfg) == pytest.approx(
        objective(U @ V.T, d, xf, yf, cfg), rel=1e-10)


def test_factored_spectrum(rng):
    U, V = rng.normal(size=(9, 3)), rng.normal(size=(6, 3))
    s = np.linalg.svd(U @ V.T, compute_uv=False)[:3]
    assert np.allclose(factored_spectrum(U, V), s, rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("penalty", [PenaltySpec("smooth_trace", eps=0.1), FROB])
def test_gradient_matches_finite_differences(seed, penalty):
    d, xf, yf, _, _ = small_problem(seed=seed, n_x=6, n_y=5, n_obs=18)
    rng = np.random.default_rng(seed)
    cfg = SolveConfig(lam=0.05, penalty=penalty)
    U, V = rng.normal(size=(xf.m, 3)), rng.normal(size=(yf.m, 3))
    dU, dV = gradient(U, V, d, xf, yf, cfg)
    fU = finite_difference_gradient(lambda M: objective((M, V), d, xf, yf, cfg), U)
    fV = finite_difference_gradient(lambda M: objective((U, M), d, xf, yf, cfg), V)
    ana, num = np.concatenate([dU.ravel(), dV.ravel()]), np.concatenate([fU.ravel(), fV.ravel()])
    assert np.linalg.norm(ana - num) <= 1e-5 * np.linalg.norm(num)


def test_gradient_at_zero_and_frobenius_closed_form(rng):
    d, xf, yf, _, _ = small_problem(seed=4)
    zU, zV = np.zeros((xf.m, 2)), np.zeros((yf.m, 2))
    for lam in (0.0, 5.0):
        dU, dV = gradient(zU, zV, d, xf, yf, SolveConfig(lam=lam, penalty=FROB))
        assert not dU.any() and not dV.any()
    U, V = rng.normal(size=(xf.m, 2)), rng.normal(size=(yf.m, 2))
    lam = 0.3
    gU, gV = gradient(U, V, d, xf, yf, SolveConfig(lam=lam, penalty=FROB))
    hU, hV = gradient(U, V, d, xf, yf, SolveConfig(lam=0.0, penalty=FROB))
    assert np.allclose(gU - hU, 2 * lam * U @ V.T @ V, atol=1e-10)
    assert np.allclose(gV - hV, 2 * lam * V @ U.T @ U, atol=1e-10)


def test_gradient_rejects_nonsmooth():
    d, xf, yf, _, _ = small_problem()
    with pytest.raises(UnsupportedPenalty):
        gradient(np.ones((xf.m, 1)), np.ones((yf.m, 1)), d, xf, yf, SolveConfig(lam=1.0, penalty=TRACE))
    with pytest.raises(UnsupportedPenalty):
        solve_lowrank(d, xf, yf, SolveConfig(lam=1.0, penalty=TRACE))


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(lam=-1.0)
    with pytest.raises(ValueError):
        SolveConfig(lam=1.0, rank0=3, rank_max=2)
    with pytest.raises(ValueError):
        SolveConfig(lam=1.0, grad_tol=0.0)
    with pytest.raises(ValueError):
        SolveConfig(lam=1.0, direction="newton")


def test_huge_lambda_gives_zero():
    d, xf, yf, _, _ = small_problem(seed=5)
    model, rep = solve_lowrank(d, xf, yf, SolveConfig(lam=1e6 * np.mean(np.abs(d.ratings))))
    assert rep.rank_deficient and rep.certified and rep.stage_ranks == [1]
    assert np.max(np.abs(model.coefficients())) < 1e-8


@pytest.mark.parametrize("escalation", ["random", "gradient"])
@pytest.mark.parametrize("direction", ["bb", "lbfgs"])
def test_matches_convex_oracle(escalation, direction):
    d, xf, yf, _, _ = small_problem(seed=0)
    lam = 0.02
    cfg = SolveConfig(lam=lam, eps=1e-3, grad_tol=1e-9, max_iter=20000, center=False,
                      escalation=escalation, direction=direction)
    model, rep = solve_lowrank(d, xf, yf, cfg)
    assert rep.rank_deficient
    ref = convex_solve_trace(d, xf, yf, lam)
    primal = objective(model, d, xf, yf, SolveConfig(lam=lam, penalty=TRACE, center=False))
    assert abs(primal - ref.value) <= 1e-4 * abs(ref.value)
    gap = duality_gap(model, d, SolveConfig(lam=lam, penalty=TRACE, center=False))
    assert -1e-8 <= gap <= 1e-3 * abs(primal)


def test_zero_lambda_reaches_least_squares():
    d, xf, yf, _, _ = small_problem(seed=6, n_x=5, n_y=4, n_obs=16, eta=0.7, zeta=0.7)
    r = min(xf.m, yf.m)
    cfg = SolveConfig(lam=0.0, rank0=r, rank_max=r, grad_tol=1e-12, max_iter=50000, center=False,
                      init_scale=0.1, direction="lbfgs")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankCapWarning)
        model, rep = solve_lowrank(d, xf, yf, cfg)
    ref = least_squares_value(d, xf, yf)
    assert abs(rep.objective - ref) <= 1e-6 * max(1.0, abs(ref))


def test_monotone_descent_and_determinism():
    d, xf, yf, _, _ = small_problem(seed=7)
    cfg = SolveConfig(lam=0.01, seed=3)
    m1, r1 = solve_lowrank(d, xf, yf, cfg)
    m2, r2 = solve_lowrank(d, xf, yf, cfg)
    assert r1.objective == r2.objective
    assert np.array_equal(m1.U, m2.U)
    assert len(r1.history) > 1


def test_history_within_each_stage_is_monotone():
    d, xf, yf, _, _ = small_problem(seed=8)
    _, rep = solve_lowrank(d, xf, yf, SolveConfig(lam=0.005, direction="lbfgs"))
    h = np.asarray(rep.history)
    pos = 0
    for its in rep.stage_iterations:
        seg = h[pos:pos + its + 1]
        assert np.all(np.diff(seg) <= 0)
        pos += its + 1


def test_rank_cap_warning():
    d, xf, yf, _, _ = small_problem(seed=9)
    with pytest.warns(RankCapWarning):
        _, rep = solve_lowrank(d, xf, yf, SolveConfig(lam=1e-5, rank_max=1))
    assert rep.hit_rank_max and not rep.certified


def test_warm_start():
    d, xf, yf, _, _ = small_problem(seed=10)
    cfg = SolveConfig(lam=0.01, escalation="gradient", direction="lbfgs")
    cold, rep = solve_lowrank(d, xf, yf, cfg)
    warm, rep2 = solve_lowrank(d, xf, yf, cfg, init=cold)
    assert rep2.iterations <= rep.iterations
    assert rep2.objective == pytest.approx(rep.objective, rel=1e-5)
    with pytest.raises(ValueError):
        solve_lowrank(d, xf, yf, cfg, init=OperatorModel(xf, yf, alpha=cold.coefficients()))


def test_frob_lowrank():
    d, xf, yf, _, _ = small_problem(seed=11)
    model, rep = solve_frob_lowrank(d, xf, yf, 2, 1e6, restarts=2)
    # the column-product penalty is quartic at 0, so descent stalls just above it
    assert np.max(np.abs(model.coefficients())) < 1e-6 * np.std(d.ratings)
    model, rep = solve_frob_lowrank(d, xf, yf, 2, 1e-3, restarts=3, seed=1)
    assert rep.objective == min(rep.extra["restart_objectives"])
    assert model.U.shape[1] == 2 and np.isfinite(rep.objective)
    with pytest.raises(ValueError):
        solve_frob_lowrank(d, xf, yf, min(xf.m, yf.m) + 1, 1e-3)
    # at full rank both methods are reported; no ordering is implied
    r = min(xf.m, yf.m)
    _, full = solve_frob_lowrank(d, xf, yf, r, 1e-3, restarts=1)
    assert np.isfinite(full.objective)


def test_duality_gap_examples():
    d, xf, yf, _, _ = small_problem(seed=12)
    lam = 0.03
    cfg = SolveConfig(lam=lam, penalty=TRACE, center=False)
    ref = convex_solve_trace(d, xf, yf, lam)
    opt = OperatorModel(xf, yf, alpha=ref.alpha)
    primal = objective(opt, d, xf, yf, cfg)
    gap = duality_gap(opt, d, cfg)
    assert -1e-8 <= gap <= 1e-4 * (1 + abs(primal))
    zero = OperatorModel(xf, yf, alpha=np.zeros((xf.m, yf.m)))
    assert duality_gap(zero, d, cfg) > 1e-3
    with pytest.raises(UnsupportedPenalty):
        duality_gap(opt, d, SolveConfig(lam=lam, penalty=PenaltySpec("rank_cap", rank=1)))


def test_duality_gap_vanishes_at_ridge_solution():
    d, xf, yf, _, _ = small_problem(seed=13)
    lam = 0.05
    A = np.einsum("ij,ik->ijk", xf.X[d.users], yf.X[d.items]).reshape(len(d), -1)
    n = len(d)
    a = np.linalg.solve(A.T @ A / n + 2 * lam * np.eye(A.shape[1]), A.T @ d.ratings / n)
    model = OperatorModel(xf, yf, alpha=a.reshape(xf.m, yf.m))
    gap = duality_gap(model, d, SolveConfig(lam=lam, penalty=FROB, center=False))
    assert abs(gap) <= 1e-6


def test_gap_nonnegative_at_random_points(rng):
    d, xf, yf, _, _ = small_problem(seed=14)
    for penalty in (TRACE, FROB, PenaltySpec("smooth_trace", eps=0.1)):
        cfg = SolveConfig(lam=0.02, penalty=penalty, center=False)
        for _ in range(20):
            m = OperatorModel(xf, yf, alpha=rng.normal(scale=0.3, size=(xf.m, yf.m)))
            assert duality_gap(m, d, cfg) >= -1e-8


def test_identity_roots_are_plain_completion():
    d, _, _, _, _ = small_problem(seed=15, eta=0.0, zeta=0.0)
    xf, yf = GramFactor.identity(d.n_users), GramFactor.identity(d.n_items)
    model, rep = solve_lowrank(d, xf, yf, SolveConfig(lam=0.01))
    assert np.all(np.isfinite(predict_all(model, d)))
    assert rep.rank_deficient
