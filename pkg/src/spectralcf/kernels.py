"""Gram matrices for users and objects, their combinations, and square roots.

Every learner in this package only ever sees a kernel through a square root
``X`` with ``K = X X^T``; the rows of ``X`` are coordinates of the entities in
an orthonormal basis of their span.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "NotPSDError",
    "GramFactor",
    "KernelSpec",
    "dirac_gram",
    "linear_gram",
    "rbf_gram",
    "combine",
    "multitask_gram",
    "normalize_rows",
    "factor_gram",
    "build_gram",
]

# negative eigenvalues down to -NEG_TOL * lambda_max are treated as round-off
NEG_TOL = 1e-8


class NotPSDError(ValueError):
    """Raised when a matrix meant to be a Gram matrix is clearly indefinite."""


@dataclass(frozen=True)
class GramFactor:
    """Square root ``X`` (n x m) of a Gram matrix, with full column rank."""

    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"square root must be 2-D, got shape {X.shape}")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def gram(self) -> np.ndarray:
        return self.X @ self.X.T

    @classmethod
    def identity(cls, n: int) -> "GramFactor":
        return cls(np.eye(n))


@dataclass(frozen=True)
class KernelSpec:
    """How to build one side's kernel.

    ``weight`` is the share of the attribute kernel in the convex mix with the
    Dirac kernel (0 = identities only, 1 = attributes only).  ``offset`` adds a
    constant to the Dirac part, giving the multitask kernel ``k_D + c``.
    """

    side: Literal["user", "object"] = "user"
    weight: float = 0.0
    family: Literal["linear", "rbf"] = "linear"
    bandwidth: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.side not in ("user", "object"):
            raise ValueError(f"unknown side {self.side!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"kernel weight must lie in [0, 1], got {self.weight}")
        if self.family not in ("linear", "rbf"):
            raise ValueError(f"unknown attribute kernel family {self.family!r}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.offset < 0:
            raise ValueError(f"multitask offset must be >= 0, got {self.offset}")

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "weight": self.weight,
            "family": self.family,
            "bandwidth": self.bandwidth,
            "offset": self.offset,
        }


def _check_attributes(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError(f"attribute matrix needs at least one row, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("attribute matrix contains non-finite values")
    return A


def dirac_gram(n: int) -> np.ndarray:
    """Identity Gram matrix: distinct entities are orthonormal."""
    if n < 1:
        raise ValueError("Dirac kernel needs at least one entity")
    return np.eye(n)


def linear_gram(A) -> np.ndarray:
    A = _check_attributes(A)
    K = A @ A.T
    return 0.5 * (K + K.T)


def rbf_gram(A, h: float) -> np.ndarray:
    """Gaussian kernel ``exp(-|a_i - a_j|^2 / (2 h^2))``."""
    if not h > 0:
        raise ValueError(f"RBF bandwidth must be positive, got {h}")
    A = _check_attributes(A)
    sq = np.sum(A * A, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * A @ A.T, 0.0)
    K = np.exp(-d2 / (2.0 * h * h))
    np.fill_diagonal(K, 1.0)
    return 0.5 * (K + K.T)


def combine(attr, dirac, w: float) -> np.ndarray:
    """Convex mix ``w * attr + (1 - w) * dirac``."""
    attr = np.asarray(attr, dtype=float)
    dirac = np.asarray(dirac, dtype=float)
    if attr.shape != dirac.shape:
        raise ValueError(f"size mismatch: {attr.shape} vs {dirac.shape}")
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"mix weight must lie in [0, 1], got {w}")
    if w == 0.0:
        return dirac.copy()
    if w == 1.0:
        return attr.copy()
    return w * attr + (1.0 - w) * dirac


def multitask_gram(dirac, c: float) -> np.ndarray:
    """Dirac kernel shifted by a constant: ``k_D(x, x') + c``."""
    if c < 0:
        raise ValueError(f"multitask offset must be >= 0, got {c}")
    dirac = np.asarray(dirac, dtype=float)
    return dirac + c


def normalize_rows(A) -> np.ndarray:
    """Scale every row to unit L2 norm; all-zero rows are left at zero."""
    A = _check_attributes(A)
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    return np.divide(A, norms, out=np.zeros_like(A), where=norms > 0)


def factor_gram(K, tol: float = 1e-10, method: str = "eigh") -> GramFactor:
    """Square root ``X`` of a PSD matrix with ``X X^T = K``.

    Parameters
    ----------
    K : array_like
        Symmetric positive semidefinite matrix.
    tol : float
        Directions with eigenvalue (or pivot) below ``tol * lambda_max`` are
        dropped, which sets the reduced dimension ``m``.
    method : {"eigh", "cholesky"}
        Symmetric eigendecomposition (kernel PCA) or pivoted Cholesky.

    Raises
    ------
    NotPSDError
        If ``K`` has an eigenvalue below ``-1e-8 * lambda_max``.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
        raise ValueError(f"Gram matrix must be square and non-empty, got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("Gram matrix contains non-finite values")
    scale = np.max(np.abs(K))
    if not np.allclose(K, K.T, rtol=0, atol=1e-10 * max(scale, 1.0)):
        raise ValueError("Gram matrix is not symmetric")
    K = 0.5 * (K + K.T)
    w, V = np.linalg.eigh(K)
    lam_max = max(w[-1], 0.0)
    if w[0] < -NEG_TOL * max(lam_max, np.finfo(float).tiny):
        raise NotPSDError(
            f"Gram matrix is indefinite: smallest eigenvalue {w[0]:.3e}, largest {lam_max:.3e}"
        )
    if lam_max == 0.0:
        raise ValueError("Gram matrix is zero; nothing to factor")
    if method == "eigh":
        keep = w > tol * lam_max
        w, V = w[keep][::-1], V[:, keep][:, ::-1]
        return GramFactor(V * np.sqrt(w))
    if method == "cholesky":
        return GramFactor(_pivoted_cholesky(K, tol * lam_max))
    raise ValueError(f"unknown factorization method {method!r}")


def _pivoted_cholesky(K: np.ndarray, threshold: float) -> np.ndarray:
    n = K.shape[0]
    # dpstrf stops once the largest remaining pivot drops to ``tol`` (absolute)
    c, piv, rank, info = lapack.dpstrf(K, lower=1, tol=threshold)
    if info < 0:
        raise RuntimeError(f"dpstrf failed with info={info}")
    L = np.tril(c)[:, :rank]
    X = np.empty((n, rank))
    X[piv - 1] = L
    return X


def build_gram(spec: KernelSpec, n: int, attributes=None) -> np.ndarray:
    """Gram matrix for ``n`` entities described by ``spec``.

    Attribute vectors are L2-normalized before the linear kernel so that the
    attribute and Dirac kernels share a unit diagonal.
    """
    dirac = multitask_gram(dirac_gram(n), spec.offset) if spec.offset else dirac_gram(n)
    if spec.weight == 0.0:
        return dirac
    if attributes is None:
        raise ValueError(f"{spec.side} kernel has weight {spec.weight} but no attributes")
    A = _check_attributes(attributes)
    if A.shape[0] != n:
        raise ValueError(f"{spec.side} attributes have {A.shape[0]} rows, expected {n}")
    if spec.family == "linear":
        attr = linear_gram(normalize_rows(A))
    else:
        attr = rbf_gram(A, spec.bandwidth)
    return combine(attr, dirac, spec.weight)
