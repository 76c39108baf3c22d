"""Datasets, feature encodings, cross-validation folds and error metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import RatingsDataset

__all__ = [
    "GENRES",
    "OCCUPATIONS",
    "AGE_BOUNDS",
    "USER_FEATURES",
    "SynthConfig",
    "MovieLensFormatError",
    "load_movielens",
    "encode_user",
    "synth_generate",
    "kfold_split",
    "train_validation_split",
    "rmse",
    "subsample",
    "write_triplets",
    "write_attributes",
    "export_dataset",
]

GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
OCCUPATIONS = (
    "administrator", "artist", "doctor", "educator", "engineer", "entertainment",
    "executive", "healthcare", "homemaker", "lawyer", "librarian", "marketing", "none",
    "other", "programmer", "retired", "salesman", "scientist", "student", "technician",
    "writer",
)
# age buckets [7,18) [18,25) [25,35) [35,45) [45,74); ages outside are clipped
AGE_BOUNDS = (18, 25, 35, 45)
USER_FEATURES = 5 + 1 + len(OCCUPATIONS)


class MovieLensFormatError(ValueError):
    pass


def encode_user(age: int, gender: str, occupation: str) -> np.ndarray:
    """27 binary flags: 5 age buckets, female, 21 occupations."""
    occupation = occupation.strip().lower()
    if occupation not in OCCUPATIONS:
        raise MovieLensFormatError(f"unknown occupation {occupation!r}")
    if gender not in ("M", "F"):
        raise MovieLensFormatError(f"unknown gender {gender!r}")
    v = np.zeros(USER_FEATURES)
    v[int(np.searchsorted(AGE_BOUNDS, age, side="right"))] = 1.0
    v[5] = 1.0 if gender == "F" else 0.0
    v[6 + OCCUPATIONS.index(occupation)] = 1.0
    return v


def _read_lines(path: Path, encoding: str = "latin-1"):
    if not path.is_file():
        raise FileNotFoundError(f"missing MovieLens file {path}")
    with open(path, encoding=encoding, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line:
                yield lineno, line


def _contiguous_ids(ids: list[int], what: str) -> None:
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise MovieLensFormatError(f"{what} ids are not 1..{len(ids)}")


def load_movielens(path):
    """Read ``u.data``, ``u.user`` and ``u.item`` from a MovieLens-100k directory.

    Returns ``(dataset, user_attributes, item_attributes)`` where entity index
    ``i`` corresponds to MovieLens id ``i + 1``.  Ratings keep file order.
    """
    path = Path(path)
    users: dict[int, np.ndarray] = {}
    for lineno, line in _read_lines(path / "u.user"):
        parts = line.split("|")
        if len(parts) != 5:
            raise MovieLensFormatError(f"u.user line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            uid, age = int(parts[0]), int(parts[1])
            users[uid] = encode_user(age, parts[2], parts[3])
        except (ValueError, MovieLensFormatError) as exc:
            raise MovieLensFormatError(f"u.user line {lineno}: {exc}") from None
    items: dict[int, np.ndarray] = {}
    for lineno, line in _read_lines(path / "u.item"):
        parts = line.split("|")
        if len(parts) != 5 + len(GENRES):
            raise MovieLensFormatError(f"u.item line {lineno}: expected 24 fields, got {len(parts)}")
        try:
            flags = np.array([int(x) for x in parts[5:]], dtype=float)
            iid = int(parts[0])
        except ValueError as exc:
            raise MovieLensFormatError(f"u.item line {lineno}: {exc}") from None
        if not np.all((flags == 0) | (flags == 1)):
            raise MovieLensFormatError(f"u.item line {lineno}: genre flags must be 0/1")
        items[iid] = flags
    _contiguous_ids(list(users), "user")
    _contiguous_ids(list(items), "item")

    a, b, t = [], [], []
    for lineno, line in _read_lines(path / "u.data"):
        parts = line.split("\t")
        if len(parts) != 4:
            raise MovieLensFormatError(f"u.data line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            uid, iid, r = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise MovieLensFormatError(f"u.data line {lineno}: {exc}") from None
        if uid not in users or iid not in items:
            raise MovieLensFormatError(f"u.data line {lineno}: unknown user or item id")
        a.append(uid - 1)
        b.append(iid - 1)
        t.append(r)
    d = RatingsDataset(np.array(a), np.array(b), np.array(t), len(users), len(items))
    if d.has_duplicates():
        raise MovieLensFormatError("u.data contains a repeated (user, item) pair")
    ua = np.stack([users[i + 1] for i in range(len(users))])
    ia = np.stack([items[i + 1] for i in range(len(items))])
    return d, ua, ia


@dataclass(frozen=True)
class SynthConfig:
    """Random bilinear ratings with partially observed features."""

    n_users: int = 50
    n_items: int = 50
    d_full: int = 6
    d_obs: int = 3
    noise_sd: float = 0.1
    n_ratings: int = 800
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.d_obs <= self.d_full:
            raise ValueError("need 1 <= d_obs <= d_full")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 1 <= self.n_ratings <= self.n_users * self.n_items:
            raise ValueError("n_ratings must lie in [1, n_users * n_items]")


def synth_generate(cfg: SynthConfig):
    """Sample ``t = x_a^T B y_b + noise`` on distinct random (user, item) pairs.

    Features and ``B`` are standard normal (``B`` scaled by ``1/d_full``);
    only the first ``d_obs`` feature coordinates are returned as attributes.
    Returns ``(dataset, user_attributes, item_attributes, truth)``.
    """
    rng = np.random.default_rng(cfg.seed)
    xs = rng.standard_normal((cfg.n_users, cfg.d_full))
    ys = rng.standard_normal((cfg.n_items, cfg.d_full))
    B = rng.standard_normal((cfg.d_full, cfg.d_full)) / cfg.d_full
    pairs = rng.choice(cfg.n_users * cfg.n_items, size=cfg.n_ratings, replace=False)
    a, b = pairs // cfg.n_items, pairs % cfg.n_items
    clean = np.einsum("ij,jk,ik->i", xs[a], B, ys[b])
    t = clean + cfg.noise_sd * rng.standard_normal(cfg.n_ratings)
    d = RatingsDataset(a, b, t, cfg.n_users, cfg.n_items)
    truth = {"B": B, "user_features": xs, "item_features": ys, "clean": clean}
    return d, xs[:, : cfg.d_obs].copy(), ys[:, : cfg.d_obs].copy(), truth


def kfold_split(d, k: int, seed: int = 0):
    """Shuffled ``k``-fold partition as a list of ``(train_idx, test_idx)``."""
    n = d if isinstance(d, (int, np.integer)) else len(d)
    if k < 2:
        raise ValueError("need at least two folds")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} observations")
    perm = np.random.default_rng(seed).permutation(n)
    tests = np.array_split(perm, k)
    out = []
    for i, test in enumerate(tests):
        train = np.concatenate([t for j, t in enumerate(tests) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def train_validation_split(idx, fraction: float = 0.1, seed: int = 0):
    """Hold out ``fraction`` of ``idx`` (at least one element) for validation."""
    idx = np.asarray(idx)
    perm = np.random.default_rng(seed).permutation(len(idx))
    n_val = max(1, int(round(fraction * len(idx))))
    return np.sort(idx[perm[n_val:]]), np.sort(idx[perm[:n_val]])


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse of an empty vector")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def subsample(d: RatingsDataset, user_attrs, item_attrs, n_users: int, n_items: int, seed: int = 0):
    """Random users and items with all their mutual ratings, re-indexed."""
    rng = np.random.default_rng(seed)
    us = np.sort(rng.choice(d.n_users, size=min(n_users, d.n_users), replace=False))
    its = np.sort(rng.choice(d.n_items, size=min(n_items, d.n_items), replace=False))
    umap = np.full(d.n_users, -1)
    imap = np.full(d.n_items, -1)
    umap[us] = np.arange(len(us))
    imap[its] = np.arange(len(its))
    keep = (umap[d.users] >= 0) & (imap[d.items] >= 0)
    sub = RatingsDataset(umap[d.users[keep]], imap[d.items[keep]], d.ratings[keep], len(us), len(its))
    return sub, np.asarray(user_attrs)[us], np.asarray(item_attrs)[its]


def write_triplets(d: RatingsDataset, path) -> None:
    """Tab-separated ``user_id  item_id  rating`` with 1-based ids."""
    with open(path, "w", newline="") as fh:
        for u, i, r in zip(d.users, d.items, d.ratings):
            rs = str(int(r)) if float(r).is_integer() else repr(float(r))
            fh.write(f"{u + 1}\t{i + 1}\t{rs}\n")


def write_attributes(A, path, prefix: str = "f") -> None:
    """One entity per line, comma-separated, with a header row."""
    A = np.asarray(A, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"{prefix}{j}" for j in range(A.shape[1])])
        for i, row in enumerate(A):
            w.writerow([i + 1] + [repr(float(x)) for x in row])


def read_attributes(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def read_triplets(path, n_users: int | None = None, n_items: int | None = None) -> RatingsDataset:
    a, b, t = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise ValueError(f"{path} line {lineno}: expected user, item, rating")
            a.append(int(parts[0]) - 1)
            b.append(int(parts[1]) - 1)
            t.append(float(parts[2]))
    a, b = np.array(a), np.array(b)
    return RatingsDataset(a, b, np.array(t), n_users or a.max() + 1, n_items or b.max() + 1)


def export_dataset(directory, d: RatingsDataset, user_attrs=None, item_attrs=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_triplets(d, directory / "ratings.tsv")
    if user_attrs is not None:
        write_attributes(user_attrs, directory / "users.csv")
    if item_attrs is not None:
        write_attributes(item_attrs, directory / "items.csv")
