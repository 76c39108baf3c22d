import numpy as np
import pytest

from spectralcf.kernels import GramFactor, factor_gram
from spectralcf.mkl import (
    CORNER_NAMES,
    KernelBank,
    corner_bank,
    kron_invariance_check,
    predict_mkl,
    solve_mkl,
)
from spectralcf.model import predict_all
from spectralcf.oracle import convex_solve_blocks, convex_solve_trace
from spectralcf.solver import SolveConfig, solve_lowrank

from conftest import small_problem

TIGHT = dict(eps=1e-4, grad_tol=1e-9, max_iter=20000, center=False)


def test_single_pair_reduces_to_solver():
    d, xf, yf, _, _ = small_problem(seed=0)
    cfg = SolveConfig(lam=0.02)
    (m,), rep = solve_mkl(d, KernelBank([(xf, yf)]), cfg)
    ref, ref_rep = solve_lowrank(d, xf, yf, cfg)
    assert rep.objective == pytest.approx(ref_rep.objective, rel=1e-8, abs=1e-12)
    assert np.allclose(predict_all(m, d), predict_all(ref, d), atol=1e-8)


def test_duplicated_pair_matches_single_optimum():
    d, xf, yf, _, _ = small_problem(seed=1)
    lam = 0.02
    single = convex_solve_trace(d, xf, yf, lam).value
    double = convex_solve_blocks(d, [(xf, yf), (xf, yf)], lam).value
    assert double == pytest.approx(single, rel=1e-4)
    models, _ = solve_mkl(d, KernelBank([(xf, yf), (xf, yf)]), SolveConfig(lam=lam, **TIGHT))
    assert _trace_objective(models, d, lam) == pytest.approx(single, rel=1e-4)


def _trace_objective(models, d, lam):
    r = d.ratings - predict_mkl(models, d)
    norms = [np.sum(np.linalg.svd(m.coefficients(), compute_uv=False)) for m in models]
    return 0.5 * float(np.mean(r**2)) + lam * float(np.sum(norms))


def test_mkl_objective_not_above_any_single_block():
    d, _, _, K, G = small_problem(seed=2)
    rng = np.random.default_rng(2)
    A = rng.normal(size=(d.n_users, 2))
    pairs = [(factor_gram(K), factor_gram(G)), (GramFactor.identity(d.n_users), factor_gram(G)),
             (factor_gram(A @ A.T), GramFactor.identity(d.n_items))]
    lam = 0.02
    joint = convex_solve_blocks(d, pairs, lam).value
    for xf, yf in pairs:
        assert joint <= convex_solve_trace(d, xf, yf, lam).value * (1 + 1e-6)


def test_mkl_matches_oracle():
    d, _, _, K, G = small_problem(seed=3, n_x=7, n_y=6, n_obs=28)
    pairs = [(factor_gram(K), factor_gram(G)),
             (GramFactor.identity(d.n_users), GramFactor.identity(d.n_items))]
    lam = 0.015
    models, rep = solve_mkl(d, KernelBank(pairs), SolveConfig(lam=lam, escalation="gradient", **TIGHT))
    assert rep.rank_deficient
    ref = convex_solve_blocks(d, pairs, lam)
    assert _trace_objective(models, d, lam) == pytest.approx(ref.value, rel=1e-4)


def test_block_predictions_sum_to_total():
    d, xf, yf, _, _ = small_problem(seed=4)
    bank = KernelBank([(xf, yf), (GramFactor.identity(d.n_users), yf)])
    models, rep = solve_mkl(d, bank, SolveConfig(lam=0.01))
    total = np.zeros(len(d))
    for m in models:
        total = total + predict_all(m, d)
    assert np.array_equal(predict_mkl(models, d), total)
    assert models[0].offset == pytest.approx(np.mean(d.ratings)) and models[1].offset == 0.0
    assert len(rep.extra["block_trace_norms"]) == 2


def test_large_lambda_zeroes_some_block():
    d, xf, yf, _, _ = small_problem(seed=5)
    rng = np.random.default_rng(5)
    bank = corner_bank(rng.normal(size=(d.n_users, 3)), rng.normal(size=(d.n_items, 3)),
                       d.n_users, d.n_items)
    lam = 0.5 * np.std(d.ratings)
    _, rep = solve_mkl(d, bank, SolveConfig(lam=lam))
    assert min(rep.extra["block_trace_norms"]) < 1e-6


def test_bank_validation():
    a, b = GramFactor.identity(3), GramFactor.identity(4)
    with pytest.raises(ValueError):
        KernelBank([])
    with pytest.raises(ValueError):
        KernelBank([(a, b), (b, b)])
    with pytest.raises(TypeError):
        KernelBank([(np.eye(3), b)])
    with pytest.raises(ValueError):
        KernelBank([(a, b)], names=("x", "y"))
    d, xf, yf, _, _ = small_problem()
    with pytest.raises(ValueError):
        solve_mkl(d, KernelBank([(a, b)]), SolveConfig(lam=0.1))


def test_corner_bank(rng):
    ua, ia = rng.normal(size=(6, 3)), rng.normal(size=(5, 2))
    bank = corner_bank(ua, ia, 6, 5)
    assert len(bank) == 4 and bank.names == CORNER_NAMES
    assert all(x.n == 6 and y.n == 5 for x, y in bank.pairs)
    dx, dy = bank.pairs[0]
    assert dx.m == 6 and np.array_equal(dx.X, np.eye(6))
    assert dy.m == 5 and np.array_equal(dy.X, np.eye(5))
    assert bank.pairs[3][0].m == 3 and bank.pairs[3][1].m == 2
    with pytest.raises(ValueError):
        corner_bank(None, ia, 6, 5)
    with pytest.raises(ValueError):
        corner_bank(ua, ia, 7, 5)


def test_kron_invariance_examples(rng):
    B = rng.normal(size=(5, 4))
    assert kron_invariance_check(np.eye(5), np.eye(4), B)
    for _ in range(20):
        A, C = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        assert kron_invariance_check(A @ A.T, C @ C.T, rng.normal(size=(8, 8)))
    A = rng.normal(size=(8, 3))
    assert kron_invariance_check(A @ A.T, np.eye(8), rng.normal(size=(8, 8)))
    with pytest.raises(ValueError):
        kron_invariance_check(np.eye(3), np.eye(3), np.ones((2, 3)))
