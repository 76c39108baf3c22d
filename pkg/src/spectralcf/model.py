"""Finite representation of a learned operator and its predictions.

The operator is ``F = sum_lm alpha_lm u_l (x) v_m`` over orthonormal bases of
the user and object spans.  A user with coordinates ``x`` (a row of the user
square root) and an object with coordinates ``y`` get the score
``x^T alpha y`` plus the training-rating offset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import GramFactor

__all__ = [
    "RatingsDataset",
    "OperatorModel",
    "predict_pair",
    "predict_all",
    "embed_new",
    "predict_new",
    "save_model",
    "load_model",
]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class RatingsDataset:
    """``N`` observed ratings ``t_i`` of object ``items[i]`` by user ``users[i]``."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    n_users: int
    n_items: int

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64).ravel()
        items = np.asarray(self.items, dtype=np.int64).ravel()
        ratings = np.asarray(self.ratings, dtype=float).ravel()
        if not (len(users) == len(items) == len(ratings)):
            raise ValueError("users, items and ratings must have equal length")
        if len(users) == 0:
            raise ValueError("dataset needs at least one observation")
        if users.min() < 0 or users.max() >= self.n_users:
            raise ValueError(f"user index out of range [0, {self.n_users})")
        if items.min() < 0 or items.max() >= self.n_items:
            raise ValueError(f"item index out of range [0, {self.n_items})")
        if not np.all(np.isfinite(ratings)):
            raise ValueError("ratings must be finite")
        for name, arr in (("users", users), ("items", items), ("ratings", ratings)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.ratings)

    def subset(self, idx) -> "RatingsDataset":
        idx = np.asarray(idx)
        return RatingsDataset(
            self.users[idx], self.items[idx], self.ratings[idx], self.n_users, self.n_items
        )

    def with_ratings(self, ratings) -> "RatingsDataset":
        return RatingsDataset(self.users, self.items, ratings, self.n_users, self.n_items)

    def has_duplicates(self) -> bool:
        keys = self.users * self.n_items + self.items
        return len(np.unique(keys)) != len(keys)


@dataclass(frozen=True)
class OperatorModel:
    """Coefficients over the user/object bases given by two square roots.

    Exactly one of ``alpha`` (dense, ``m_X x m_Y``) or the pair ``(U, V)``
    with ``alpha = U V^T`` is stored.
    """

    xfactor: GramFactor
    yfactor: GramFactor
    alpha: np.ndarray | None = None
    U: np.ndarray | None = None
    V: np.ndarray | None = None
    offset: float = 0.0
    kernels: dict = field(default_factory=dict)

    def __post_init__(self):
        mx, my = self.xfactor.m, self.yfactor.m
        if self.alpha is not None:
            if self.U is not None or self.V is not None:
                raise ValueError("store either alpha or (U, V), not both")
            alpha = np.array(self.alpha, dtype=float)
            if alpha.shape != (mx, my):
                raise ValueError(f"alpha has shape {alpha.shape}, expected {(mx, my)}")
            alpha.setflags(write=False)
            object.__setattr__(self, "alpha", alpha)
        else:
            if self.U is None or self.V is None:
                raise ValueError("need alpha or both U and V")
            U = np.array(self.U, dtype=float)
            V = np.array(self.V, dtype=float)
            if U.ndim != 2 or V.ndim != 2 or U.shape[0] != mx or V.shape[0] != my:
                raise ValueError(f"factor shapes {U.shape}, {V.shape} do not match ({mx}, {my})")
            if U.shape[1] != V.shape[1]:
                raise ValueError("U and V must have the same number of columns")
            for M in (U, V):
                M.setflags(write=False)
            object.__setattr__(self, "U", U)
            object.__setattr__(self, "V", V)

    @property
    def factored(self) -> bool:
        return self.alpha is None

    @property
    def n_users(self) -> int:
        return self.xfactor.n

    @property
    def n_items(self) -> int:
        return self.yfactor.n

    def coefficients(self) -> np.ndarray:
        """Dense ``alpha`` (formed from ``U V^T`` when stored factored)."""
        if self.alpha is not None:
            return self.alpha
        return self.U @ self.V.T

    def rank(self, tol: float = 1e-10) -> int:
        s = np.linalg.svd(self.coefficients(), compute_uv=False)
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s > tol * s[0]))


def predict_pair(m: OperatorModel, a: int, b: int) -> float:
    if not (0 <= a < m.n_users and 0 <= b < m.n_items):
        raise IndexError(f"pair ({a}, {b}) outside ({m.n_users}, {m.n_items})")
    x = m.xfactor.X[a]
    y = m.yfactor.X[b]
    return float(x @ m.coefficients() @ y) + m.offset


def predict_all(m: OperatorModel, d: RatingsDataset) -> np.ndarray:
    """Scores for every observation of ``d``; never forms the n_X x n_Y matrix."""
    if d.n_users != m.n_users or d.n_items != m.n_items:
        raise ValueError(
            f"dataset is ({d.n_users}, {d.n_items}) but model is ({m.n_users}, {m.n_items})"
        )
    XA = m.xfactor.X @ m.coefficients()
    return np.einsum("ij,ij->i", XA[d.users], m.yfactor.X[d.items]) + m.offset


def embed_new(f: GramFactor, k) -> np.ndarray:
    """Least-squares coordinates ``c`` with ``X c ~ k`` for a new entity.

    ``k`` holds the kernel values between the new entity and the ``n``
    training entities.  For a genuine kernel vector the fit is exact.
    """
    k = np.asarray(k, dtype=float).ravel()
    if k.shape[0] != f.n:
        raise ValueError(f"kernel vector has length {k.shape[0]}, expected {f.n}")
    c, *_ = np.linalg.lstsq(f.X, k, rcond=None)
    return c


def predict_new(m: OperatorModel, k_x, k_y) -> float:
    cx = embed_new(m.xfactor, k_x)
    cy = embed_new(m.yfactor, k_y)
    return float(cx @ m.coefficients() @ cy) + m.offset


def save_model(path, m: OperatorModel) -> None:
    """Write ``m`` as an uncompressed ``.npz`` archive (see README, "Model files")."""
    header = {
        "format_version": FORMAT_VERSION,
        "n_x": m.n_users,
        "n_y": m.n_items,
        "m_x": m.xfactor.m,
        "m_y": m.yfactor.m,
        "kernels": m.kernels,
    }
    with open(Path(path), "wb") as fh:
        np.savez(
            fh,
            header=np.array(json.dumps(header, sort_keys=True)),
            X=np.ascontiguousarray(m.xfactor.X, dtype="<f8"),
            Y=np.ascontiguousarray(m.yfactor.X, dtype="<f8"),
            alpha=np.ascontiguousarray(m.coefficients(), dtype="<f8"),
            offset=np.array(m.offset, dtype="<f8"),
        )


def load_model(path) -> OperatorModel:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header.get('format_version')!r}")
        X, Y, alpha = z["X"], z["Y"], z["alpha"]
        offset = float(z["offset"])
    expected = (header["n_x"], header["m_x"]), (header["n_y"], header["m_y"])
    if (X.shape, Y.shape) != expected or alpha.shape != (header["m_x"], header["m_y"]):
        raise ValueError("model file is inconsistent with its header")
    return OperatorModel(
        GramFactor(X), GramFactor(Y), alpha=alpha, offset=offset, kernels=header["kernels"]
    )
