"""Multiple kernel learning: a sum of bilinear predictors, one per kernel pair.

The predictor is ``sum_k x_k^T alpha_k y_k`` and the penalty is
``lam * sum_k Omega(alpha_k)``.  With a trace-type penalty whole blocks are
driven to zero, which selects the useful kernel pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GramFactor, KernelSpec, build_gram, factor_gram
from .model import OperatorModel, RatingsDataset, predict_all
from .solver import SolveConfig, _solve_blocks, factored_spectrum

__all__ = ["KernelBank", "solve_mkl", "predict_mkl", "corner_bank", "kron_invariance_check"]

CORNER_NAMES = ("dirac-dirac", "dirac-attr", "attr-dirac", "attr-attr")


@dataclass(frozen=True)
class KernelBank:
    """``M >= 1`` pairs of square roots over the same users and objects."""

    pairs: tuple
    names: tuple | None = None

    def __post_init__(self):
        pairs = tuple((xf, yf) for xf, yf in self.pairs)
        if not pairs:
            raise ValueError("a kernel bank needs at least one pair")
        for k, (xf, yf) in enumerate(pairs):
            if not (isinstance(xf, GramFactor) and isinstance(yf, GramFactor)):
                raise TypeError(f"pair {k} is not a pair of GramFactor")
        n_x, n_y = pairs[0][0].n, pairs[0][1].n
        for k, (xf, yf) in enumerate(pairs):
            if xf.n != n_x or yf.n != n_y:
                raise ValueError(f"pair {k} covers ({xf.n}, {yf.n}) entities, expected ({n_x}, {n_y})")
        if self.names is not None and len(self.names) != len(pairs):
            raise ValueError("one name per pair")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def n_users(self) -> int:
        return self.pairs[0][0].n

    @property
    def n_items(self) -> int:
        return self.pairs[0][1].n


def solve_mkl(d: RatingsDataset, bank: KernelBank, cfg: SolveConfig, init=None):
    """Jointly minimize over all blocks with one line search per step.

    Returns ``(models, report)``.  The rating offset is stored on the first
    model only, so per-block predictions add up to the total prediction.
    ``report.extra["block_trace_norms"]`` holds the trace norm of each block.
    ``init`` is an optional list of factored models used as a warm start.
    """
    if bank.n_users != d.n_users or bank.n_items != d.n_items:
        raise ValueError(
            f"bank covers ({bank.n_users}, {bank.n_items}) entities, dataset has ({d.n_users}, {d.n_items})"
        )
    offset = cfg.offset(d)
    warm = None
    if init is not None:
        if len(init) != len(bank) or not all(m.factored for m in init):
            raise ValueError("warm start needs one factored model per kernel pair")
        warm = [(m.U, m.V) for m in init]
    UVs, report = _solve_blocks(d, list(bank.pairs), cfg, offset, init=warm)
    models = [
        OperatorModel(xf, yf, U=U, V=V, offset=offset if k == 0 else 0.0)
        for k, ((xf, yf), (U, V)) in enumerate(zip(bank.pairs, UVs))
    ]
    report.extra["block_trace_norms"] = [float(np.sum(factored_spectrum(U, V))) for U, V in UVs]
    return models, report


def predict_mkl(models, d: RatingsDataset) -> np.ndarray:
    """Total prediction: the sum of the per-block predictions, in block order."""
    total = np.zeros(len(d))
    for m in models:
        total = total + predict_all(m, d)
    return total


def corner_bank(user_attrs, item_attrs, n_x: int, n_y: int, family: str = "linear",
                bandwidth: float = 1.0) -> KernelBank:
    """The four extreme kernel pairs: Dirac or attribute kernel on each side."""
    if user_attrs is None or item_attrs is None:
        raise ValueError("the four-corner bank needs attributes on both sides")
    user_attrs = np.asarray(user_attrs, dtype=float)
    item_attrs = np.asarray(item_attrs, dtype=float)
    if user_attrs.ndim != 2 or user_attrs.shape[0] != n_x:
        raise ValueError(f"user attributes have shape {user_attrs.shape}, expected {n_x} rows")
    if item_attrs.ndim != 2 or item_attrs.shape[0] != n_y:
        raise ValueError(f"item attributes have shape {item_attrs.shape}, expected {n_y} rows")
    dx, dy = GramFactor.identity(n_x), GramFactor.identity(n_y)
    ax = factor_gram(build_gram(KernelSpec("user", 1.0, family, bandwidth), n_x, user_attrs))
    ay = factor_gram(build_gram(KernelSpec("object", 1.0, family, bandwidth), n_y, item_attrs))
    return KernelBank(((dx, dy), (dx, ay), (ax, dy), (ax, ay)), names=CORNER_NAMES)


def kron_invariance_check(K, G, B, tol: float = 1e-8) -> bool:
    """Compare the spectrum of ``X^T B Y`` under eigen and pivoted-Cholesky roots.

    ``B`` is an ``n_X x n_Y`` test matrix.  Returns True iff the positive
    singular values agree within ``tol`` relative to the largest.
    """
    B = np.asarray(B, dtype=float)
    K = np.asarray(K, dtype=float)
    G = np.asarray(G, dtype=float)
    if B.shape != (K.shape[0], G.shape[0]):
        raise ValueError(f"test matrix has shape {B.shape}, expected {(K.shape[0], G.shape[0])}")
    spectra = []
    for method in ("eigh", "cholesky"):
        X = factor_gram(K, method=method).X
        Y = factor_gram(G, method=method).X
        spectra.append(np.linalg.svd(X.T @ B @ Y, compute_uv=False))
    s1, s2 = spectra
    scale = max(s1[0] if s1.size else 0.0, s2[0] if s2.size else 0.0, 1e-300)
    p1, p2 = s1[s1 > tol * scale], s2[s2 > tol * scale]
    return p1.size == p2.size and bool(np.all(np.abs(p1 - p2) <= tol * scale))

