"""Cross-validated experiments over kernel mixes, penalties and kernel banks.

Every result row carries a hash of the configuration that produced it.  A
cell's computation depends only on the configuration and the cell, so runs
are reproducible regardless of the number of worker processes.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .data import SynthConfig, kfold_split, load_movielens, rmse, subsample, synth_generate, train_validation_split
from .kernels import GramFactor, KernelSpec, build_gram, factor_gram
from .mkl import CORNER_NAMES, corner_bank, predict_mkl, solve_mkl
from .model import predict_all
from .solver import RankCapWarning, SolveConfig, solve_frob_lowrank, solve_lowrank

__all__ = [
    "ExperimentConfig",
    "GRID_HEADER",
    "load_config",
    "config_hash",
    "load_dataset",
    "run_grid",
    "run_compare_penalties",
    "run_mkl",
    "write_rows",
]

GRID_HEADER = ("eta", "zeta", "lambda", "rmse_mean", "rmse_std", "rank", "config_hash")
METHODS = ("trace", "frob_rank")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's numbers.

    ``rank`` is the fixed rank constraint shared by both methods (0 = no cap
    for the trace method).  ``lambdas`` apply to the trace penalty and to
    MKL, ``frob_lambdas`` to the Frobenius+rank baseline.
    """

    source: str = "synth"
    n_users: int = 50
    n_items: int = 50
    d_full: int = 6
    d_obs: int = 3
    noise_sd: float = 0.1
    n_ratings: int = 800
    movielens_path: str = "data/ml-100k"
    subsample_users: int = 0
    subsample_items: int = 0
    family: str = "linear"
    bandwidth: float = 1.0
    etas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    zetas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    lambdas: tuple = (1e-3, 3e-4, 1e-4, 3e-5, 1e-5)
    frob_lambdas: tuple = (3e-5, 1e-5, 3e-6, 1e-6)
    method: str = "trace"
    rank: int = 6
    folds: int = 10
    inner_fraction: float = 0.1
    eps: float = 0.0
    grad_tol: float = 1e-6
    ftol: float = 1e-6
    max_iter: int = 3000
    restarts: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("etas", "zetas", "lambdas", "frob_lambdas"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.source not in ("synth", "movielens"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not all(0.0 <= v <= 1.0 for v in self.etas + self.zetas):
            raise ValueError("grid values must lie in [0, 1]")
        if not self.etas or not self.zetas:
            raise ValueError("empty grid")
        if not all(v > 0 for v in self.lambdas + self.frob_lambdas) or not self.lambdas:
            raise ValueError("lambda values must be positive")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if not 0.0 < self.inner_fraction < 1.0:
            raise ValueError("inner_fraction must lie in (0, 1)")
        if self.rank < 0 or self.restarts < 1:
            raise ValueError("rank must be >= 0 and restarts >= 1")

    def synth(self) -> SynthConfig:
        return SynthConfig(self.n_users, self.n_items, self.d_full, self.d_obs, self.noise_sd,
                           self.n_ratings, self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_value(kind, raw: str):
    raw = raw.strip()
    if kind is tuple:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_FIELD_TYPES = {
    f.name: {"int": int, "float": float, "str": str, "tuple": tuple}[str(f.type)] for f in fields(ExperimentConfig)
}


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines (section ``[experiment]`` optional) plus overrides.

    Lists are comma- or space-separated.  Unknown keys are an error.
    """
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[experiment]\n" + text
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.read_string(text)
        if not parser.has_section("experiment"):
            raise ValueError(f"{path}: missing [experiment] section")
        for key, raw in parser.items("experiment"):
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}: unknown key {key!r}")
            values[key] = _parse_value(_FIELD_TYPES[key], raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown key {key!r}")
        values[key] = _parse_value(_FIELD_TYPES[key], val) if isinstance(val, str) else val
    return ExperimentConfig(**values)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, first 16 hex digits."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# data and kernels


@lru_cache(maxsize=4)
def load_dataset(cfg: ExperimentConfig):
    """``(dataset, user_attributes, item_attributes)`` for the configured source."""
    if cfg.source == "synth":
        d, ua, ia, _ = synth_generate(cfg.synth())
        return d, ua, ia
    d, ua, ia = load_movielens(cfg.movielens_path)
    if cfg.subsample_users or cfg.subsample_items:
        d, ua, ia = subsample(d, ua, ia, cfg.subsample_users or d.n_users,
                              cfg.subsample_items or d.n_items, seed=cfg.seed)
    return d, ua, ia


def _factors(cfg: ExperimentConfig, eta: float, zeta: float):
    d, ua, ia = load_dataset(cfg)
    K = build_gram(KernelSpec("user", eta, cfg.family, cfg.bandwidth), d.n_users, ua)
    G = build_gram(KernelSpec("object", zeta, cfg.family, cfg.bandwidth), d.n_items, ia)
    return factor_gram(K), factor_gram(G)


def _splits(cfg: ExperimentConfig):
    d, _, _ = load_dataset(cfg)
    folds = kfold_split(d, cfg.folds, seed=cfg.seed)
    fit_idx, val_idx = train_validation_split(folds[0][0], cfg.inner_fraction, seed=cfg.seed + 1)
    return d, folds, fit_idx, val_idx


def _solve_config(cfg: ExperimentConfig, lam: float, xf: GramFactor, yf: GramFactor) -> SolveConfig:
    cap = min(xf.m, yf.m)
    rank_max = min(cfg.rank, cap) if cfg.rank else None
    return SolveConfig(
        lam=lam, rank_max=rank_max, eps=cfg.eps or None, grad_tol=cfg.grad_tol, ftol=cfg.ftol,
        max_iter=cfg.max_iter, escalation="gradient", direction="lbfgs", seed=cfg.seed,
    )


def _fit(cfg: ExperimentConfig, method: str, train, xf, yf, lam: float, init=None):
    with warnings.catch_warnings():
        # a fixed rank constraint makes reaching the cap the expected outcome
        warnings.simplefilter("ignore", RankCapWarning)
        if method == "trace":
            return solve_lowrank(train, xf, yf, _solve_config(cfg, lam, xf, yf), init=init)
        r = min(cfg.rank or min(xf.m, yf.m), xf.m, yf.m)
        return solve_frob_lowrank(train, xf, yf, r, lam, restarts=cfg.restarts, seed=cfg.seed,
                                  max_iter=cfg.max_iter, grad_tol=cfg.grad_tol, ftol=cfg.ftol,
                                  direction="lbfgs")


def _select_lambda(cfg, method, d, fit_idx, val_idx, xf, yf):
    """Validation RMSE along the lambda path, largest lambda first."""
    lams = sorted(cfg.lambdas if method == "trace" else cfg.frob_lambdas, reverse=True)
    fit, val = d.subset(fit_idx), d.subset(val_idx)
    best = None
    init = None
    for lam in lams:
        model, _ = _fit(cfg, method, fit, xf, yf, lam, init=init)
        init = model
        err = rmse(predict_all(model, val), val.ratings)
        if best is None or err < best[1]:
            best = (lam, err, model)
    return best


def _grid_cell(args):
    cfg, method, eta, zeta = args
    try:
        d, folds, fit_idx, val_idx = _splits(cfg)
        xf, yf = _factors(cfg, eta, zeta)
        lam, _, warm = _select_lambda(cfg, method, d, fit_idx, val_idx, xf, yf)
        errs, ranks = [], []
        for train_idx, test_idx in folds:
            train, test = d.subset(train_idx), d.subset(test_idx)
            model, report = _fit(cfg, method, train, xf, yf, lam, init=warm)
            errs.append(rmse(predict_all(model, test), test.ratings))
            ranks.append(report.rank)
    except Exception as exc:
        raise RuntimeError(f"cell eta={eta}, zeta={zeta} ({method}) failed: {exc}") from exc
    return {
        "method": method,
        "eta": eta,
        "zeta": zeta,
        "lambda": lam,
        "rmse_mean": float(np.mean(errs)),
        "rmse_std": float(np.std(errs)),
        "rank": int(np.median(ranks)),
    }


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_grid(cfg: ExperimentConfig, workers: int = 1, method: str | None = None) -> list[dict]:
    """One row per (eta, zeta) cell, sorted by (eta, zeta, lambda).

    ``lambda`` is selected per cell on a validation split of the first
    training fold and then used for all folds.
    """
    method = method or cfg.method
    tasks = [(cfg, method, eta, zeta) for eta in cfg.etas for zeta in cfg.zetas]
    rows = _map(_grid_cell, tasks, workers)
    h = config_hash(cfg)
    for row in rows:
        row["config_hash"] = h
    return sorted(rows, key=lambda r: (r["eta"], r["zeta"], r["lambda"]))


def run_compare_penalties(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    """Both methods on identical folds; rows sorted by (method, eta, zeta)."""
    tasks = [(cfg, m, eta, zeta) for m in METHODS for eta in cfg.etas for zeta in cfg.zetas]
    rows = _map(_grid_cell, tasks, workers)
    h = config_hash(cfg)
    for row in rows:
        row["config_hash"] = h
    return sorted(rows, key=lambda r: (r["method"], r["eta"], r["zeta"], r["lambda"]))


def _mkl_fold(args):
    cfg, fold = args
    d, folds, _, _ = _splits(cfg)
    _, ua, ia = load_dataset(cfg)
    bank = corner_bank(ua, ia, d.n_users, d.n_items, family=cfg.family, bandwidth=cfg.bandwidth)
    train_idx, test_idx = folds[fold]
    train, test = d.subset(train_idx), d.subset(test_idx)
    out = []
    init = None
    for lam in sorted(cfg.lambdas, reverse=True):
        # the solver caps each block at its own attainable rank
        scfg = SolveConfig(
            lam=lam, rank_max=cfg.rank or None, eps=cfg.eps or None,
            grad_tol=cfg.grad_tol, ftol=cfg.ftol, max_iter=cfg.max_iter, escalation="gradient",
            direction="lbfgs", seed=cfg.seed,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankCapWarning)
            models, report = solve_mkl(train, bank, scfg, init=init)
        init = models
        out.append((lam, rmse(predict_mkl(models, test), test.ratings), report.extra["block_trace_norms"]))
    return out


def run_mkl(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    """Four-corner kernel bank: one row per lambda with CV RMSE and block norms."""
    per_fold = _map(_mkl_fold, [(cfg, k) for k in range(cfg.folds)], workers)
    h = config_hash(cfg)
    rows = []
    for j, lam in enumerate(sorted(cfg.lambdas, reverse=True)):
        errs = [pf[j][1] for pf in per_fold]
        norms = np.mean([pf[j][2] for pf in per_fold], axis=0)
        row = {"lambda": lam, "rmse_mean": float(np.mean(errs)), "rmse_std": float(np.std(errs))}
        for name, v in zip(CORNER_NAMES, norms):
            row[f"norm_{name}"] = float(v)
        row["config_hash"] = h
        rows.append(row)
    return sorted(rows, key=lambda r: r["lambda"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: list[dict], target, header=None) -> None:
    """CSV with ``header`` (default: keys of the first row) to a path or open file."""
    header = list(header or (rows[0].keys() if rows else GRID_HEADER))
    if hasattr(target, "write"):
        _write_csv(target, rows, header)
        return
    with open(target, "w", newline="") as fh:
        _write_csv(fh, rows, header)


def _write_csv(fh, rows, header) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in header])
