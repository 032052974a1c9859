"""Chopsticks: piecewise-linear 64-point series with recursive chops.

Every series starts as one line over t in (0, 1). At each level a biased coin
decides whether to chop the rightmost segment at its midpoint; the new right
piece gets a uniform offset added to its slope and/or intercept (in absolute
t, so the left piece is untouched). Continue-probabilities are tuned so the
number of chops is uniform over ``0 .. depth-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..hierarchy import (
    EMPTY, Categorical, DimensionGroup, DimensionHierarchy, Option, UNDEFINED,
)
from .dataset import LabeledDataset

VARIANTS = ("intercept", "slope", "both", "either")
N_POINTS = 64
MAX_DEPTH = 6

T = (np.arange(N_POINTS) + 0.5) / N_POINTS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChopsticksConfig:
    variant: str = "both"
    depth: int = 2
    n_samples: int = 10000
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not (2 <= int(self.depth) <= MAX_DEPTH):
            raise ConfigError(f"depth must be in [2, {MAX_DEPTH}], got {self.depth}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {"dataset": "chopsticks", **asdict(self)}


def continue_probability(level: int, depth: int) -> float:
    """P(chop again | reached ``level``), levels counted from 1."""
    return (depth - level) / (depth - level + 1)


def split_points(depth: int) -> np.ndarray:
    """Where chop ``c`` (1-based) cuts: the midpoint of the rightmost piece."""
    return 1.0 - 0.5 ** np.arange(1, depth)


# -- ground truth structure ------------------------------------------------

_LETTER = {"slope": "s", "intercept": "i"}


def _chain(variant: str, depth: int, level: int) -> DimensionGroup:
    if variant == "both":
        dims = ("slope", "intercept") if level == 0 else (f"slope_{level}", f"intercept_{level}")
    else:
        dims = (variant,) if level == 0 else (f"{variant}_{level}",)
    if level == depth - 1:
        return DimensionGroup(dims)
    cat = Categorical(f"chop_{level + 1}", (Option("stop", EMPTY), Option("chop", _chain(variant, depth, level + 1))))
    return DimensionGroup(dims, cat)


def _either(code: str, level: int, depth: int) -> DimensionGroup:
    if level == depth - 1:
        return DimensionGroup((code,))
    opts = [Option("stop", EMPTY)]
    for mode in ("slope", "intercept"):
        opts.append(Option(mode, _either(f"{code}.{_LETTER[mode]}", level + 1, depth)))
    return DimensionGroup((code,), Categorical(f"chop@{code}", tuple(opts)))


def ground_truth_hierarchy(cfg: ChopsticksConfig) -> DimensionHierarchy:
    if cfg.variant == "either":
        root = DimensionGroup((), Categorical("mode", tuple(
            Option(m, _either(_LETTER[m], 0, cfg.depth)) for m in ("slope", "intercept"))))
        return DimensionHierarchy(root)
    return DimensionHierarchy(_chain(cfg.variant, cfg.depth, 0))


# -- sampling ----------------------------------------------------------------


def _draws_per_sample(depth: int) -> int:
    # base mode, base slope, base intercept, then per level:
    # continue coin, offset-mode coin, slope offset, intercept offset
    return 3 + 4 * (depth - 1)


def sample_factors(cfg: ChopsticksConfig):
    """Raw per-sample draws.

    Row ``i`` of the uniform block is sample ``i``'s private stream, so a
    sample depends only on ``(seed, i)`` and the layout of the block.
    """
    D = cfg.depth
    n = cfg.n_samples
    U = np.random.default_rng(cfg.seed).random((n, _draws_per_sample(D)))
    base_mode = np.where(U[:, 0] < 0.5, 0, 1)  # 0 slope, 1 intercept
    if cfg.variant == "either":
        use_s0, use_b0 = base_mode == 0, base_mode == 1
    else:
        use_s0 = np.full(n, cfg.variant in ("slope", "both"))
        use_b0 = np.full(n, cfg.variant in ("intercept", "both"))
        base_mode = np.full(n, -1)
    slope = np.where(use_s0, 2 * U[:, 1] - 1, 0.0)
    intercept = np.where(use_b0, 2 * U[:, 2] - 1, 0.0)

    n_chops = np.zeros(n, dtype=int)
    going = np.ones(n, dtype=bool)
    off_mode = np.full((n, D - 1), -1)
    d_slope = np.zeros((n, D - 1))
    d_intercept = np.zeros((n, D - 1))
    for k in range(1, D):
        c = 3 + 4 * (k - 1)
        chop = going & (U[:, c] < continue_probability(k, D))
        if cfg.variant == "either":
            mode = np.where(U[:, c + 1] < 0.5, 0, 1)
            use_s, use_b = mode == 0, mode == 1
            off_mode[:, k - 1] = np.where(chop, mode, -1)
        else:
            use_s, use_b = use_s0, use_b0
        d_slope[:, k - 1] = np.where(chop & use_s, 2 * U[:, c + 2] - 1, 0.0)
        d_intercept[:, k - 1] = np.where(chop & use_b, 2 * U[:, c + 3] - 1, 0.0)
        n_chops += chop
        going = chop
    return dict(base_mode=base_mode, slope=slope, intercept=intercept,
                n_chops=n_chops, off_mode=off_mode, d_slope=d_slope, d_intercept=d_intercept)


def render_series(slope, intercept, d_slope, d_intercept) -> np.ndarray:
    """Evaluate the piecewise-linear series on the 64-point grid."""
    slope = np.atleast_1d(slope)
    intercept = np.atleast_1d(intercept)
    d_slope = np.asarray(d_slope).reshape(len(slope), -1)
    d_intercept = np.asarray(d_intercept).reshape(len(slope), -1)
    X = intercept[:, None] + slope[:, None] * T[None, :]
    splits = split_points(d_slope.shape[1] + 1)
    for c, s in enumerate(splits):
        right = (T > s)[None, :]
        X = X + right * (d_intercept[:, c, None] + d_slope[:, c, None] * T[None, :])
    return X


def _value_sequence(cfg: ChopsticksConfig, f: dict) -> np.ndarray:
    """Per-sample factor values in the order the path's dims appear."""
    n = cfg.n_samples
    if cfg.variant == "either":
        cols = [np.where(f["base_mode"] == 0, f["slope"], f["intercept"])]
        for k in range(cfg.depth - 1):
            cols.append(np.where(f["off_mode"][:, k] == 0, f["d_slope"][:, k], f["d_intercept"][:, k]))
        return np.stack(cols, axis=1)
    cols = []
    for k in range(cfg.depth):
        if cfg.variant in ("slope", "both"):
            cols.append(f["slope"] if k == 0 else f["d_slope"][:, k - 1])
        if cfg.variant in ("intercept", "both"):
            cols.append(f["intercept"] if k == 0 else f["d_intercept"][:, k - 1])
    return np.stack(cols, axis=1).reshape(n, -1)


def _assignment(cfg: ChopsticksConfig, f: dict, i: int) -> dict:
    L = f["n_chops"][i]
    choice = {}
    if cfg.variant == "either":
        choice["mode"] = f["base_mode"][i]
        code = "si"[f["base_mode"][i]]
        for k in range(cfg.depth - 1):
            if k >= L:
                choice[f"chop@{code}"] = 0
                break
            om = f["off_mode"][i, k]
            choice[f"chop@{code}"] = 1 + om
            code = f"{code}.{'si'[om]}"
        return choice
    for k in range(cfg.depth - 1):
        choice[f"chop_{k + 1}"] = 1 if k < L else 0
        if k >= L:
            break
    return choice


def generate_chopsticks(cfg: ChopsticksConfig) -> LabeledDataset:
    h = ground_truth_hierarchy(cfg)
    f = sample_factors(cfg)
    X = render_series(f["slope"], f["intercept"], f["d_slope"], f["d_intercept"])
    if cfg.noise_sigma > 0:
        # separate stream so noiseless and noisy sets share factors
        noise_rng = np.random.default_rng([cfg.seed, 1])
        X = X + cfg.noise_sigma * noise_rng.standard_normal(X.shape)

    n = cfg.n_samples
    cats = h.categorical_names
    dim_pos = {d: j for j, d in enumerate(h.continuous_dims)}
    A = np.full((n, len(cats)), UNDEFINED, dtype=np.int64)
    V = np.full((n, len(dim_pos)), np.nan)

    # group samples by their discrete path signature, fill each group at once
    key = f["n_chops"] * 10 ** (cfg.depth + 1)
    if cfg.variant == "either":
        key = key + (f["base_mode"] + 1)
        for k in range(cfg.depth - 1):
            key = key + (f["off_mode"][:, k] + 1) * 10 ** (k + 1)
    seq = _value_sequence(cfg, f)
    for u in np.unique(key):
        rows = np.flatnonzero(key == u)
        a = np.full(len(cats), UNDEFINED)
        for name, opt in _assignment(cfg, f, rows[0]).items():
            a[cats.index(name)] = opt
        A[rows] = a
        path = h.paths[h.path_index(a)]
        cols = [dim_pos[d] for g in path.groups for d in g.continuous]
        V[np.ix_(rows, cols)] = seq[rows, : len(cols)]
    return LabeledDataset(X=X.astype(np.float32), V=V, A=A, hierarchy=h, config=cfg.to_dict())


def reconstruct_from_factors(ds: LabeledDataset, variant: str, depth: int) -> np.ndarray:
    """Rebuild noiseless X from the factor table (the generator's own oracle)."""
    h = ds.hierarchy
    n = len(ds.V)
    pos = {d: j for j, d in enumerate(h.continuous_dims)}
    slope, intercept = np.zeros(n), np.zeros(n)
    d_slope, d_intercept = np.zeros((n, depth - 1)), np.zeros((n, depth - 1))
    V = np.nan_to_num(ds.V, nan=0.0)
    if variant != "either":
        if variant in ("slope", "both"):
            slope = V[:, pos["slope"]]
            for k in range(1, depth):
                d_slope[:, k - 1] = V[:, pos[f"slope_{k}"]]
        if variant in ("intercept", "both"):
            intercept = V[:, pos["intercept"]]
            for k in range(1, depth):
                d_intercept[:, k - 1] = V[:, pos[f"intercept_{k}"]]
        return render_series(slope, intercept, d_slope, d_intercept)
    for name, j in pos.items():
        parts = name.split(".")
        level = len(parts) - 1
        target_s = parts[-1] == "s"
        if level == 0:
            (slope if target_s else intercept)[:] += V[:, j]
        else:
            (d_slope if target_s else d_intercept)[:, level - 1] += V[:, j]
    return render_series(slope, intercept, d_slope, d_intercept)
