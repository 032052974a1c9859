"""Bidirectional predictability scores between factors and learned dims."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..hierarchy import DimensionHierarchy
from .gbt import make_model

LOW_SUPPORT = "LOW-SUPPORT"
MIN_OVERLAP = 50


@dataclass
class R2Result:
    score: float
    forward: float  # predicting the second argument from the first
    backward: float
    n: int
    flag: str | None = None


def r2_score(y, pred) -> float:
    y = np.asarray(y, dtype=np.float64)
    ss_tot = ((y - y.mean()) ** 2).sum()
    if ss_tot <= 0:
        return 0.0
    return 1.0 - ((y - pred) ** 2).sum() / ss_tot


def _direction(x, y, discrete_y, splits, model, model_kw):
    scores = []
    for tr, te in splits:
        m = make_model(model, discrete_y, **model_kw).fit(x[tr], y[tr])
        pred = m.predict(x[te])
        scores.append(float((pred == y[te]).mean()) if discrete_y else r2_score(y[te], pred))
    return float(np.mean(scores))


def pair_seed(seed: int, i: int, j: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(i), int(j)])


def r2_bidirectional(u, v, rows=None, seed=0, discrete_u=False, discrete_v=False,
                     n_splits=5, test_frac=0.2, min_overlap=MIN_OVERLAP, model="gbt",
                     model_kw=None) -> R2Result:
    """Geometric mean of the clipped held-out R^2 in both directions.

    Each direction is averaged over ``n_splits`` independent random train/test
    splits of ``rows``. Discrete sides are predicted by classifiers and scored
    by accuracy.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    rows = np.arange(len(u)) if rows is None else np.asarray(rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    n = len(rows)
    if n < min_overlap:
        return R2Result(0.0, 0.0, 0.0, n, LOW_SUPPORT)
    x, y = u[rows], v[rows]
    if not discrete_u:
        x = x.astype(np.float64)
    if not discrete_v:
        y = y.astype(np.float64)
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(test_frac * n)))
    splits = []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        splits.append((perm[n_test:], perm[:n_test]))
    kw = model_kw or {}
    fwd = _direction(x, y, discrete_v, splits, model, kw)
    bwd = _direction(y, x, discrete_u, splits, model, kw)
    fwd_c, bwd_c = max(fwd, 0.0), max(bwd, 0.0)
    return R2Result(float(np.sqrt(fwd_c * bwd_c)), fwd, bwd, n)


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("HIERDIS_THREADS", "1")))


def _run(tasks, fn, workers):
    w = _workers(workers)
    if w == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(w) as ex:
        return list(ex.map(fn, tasks))


@dataclass
class R4Result:
    score: float
    per_dim: np.ndarray
    best: list  # index of best-matching learned dim per factor
    matrix: np.ndarray  # pairwise bidirectional R^2


def r4(V, Z, seed=0, workers=None, **kw) -> R4Result:
    """Mean over factors of the best bidirectional R^2 with any single learned
    dim. Inactive (NaN) entries on either side are imputed with 0."""
    V = np.nan_to_num(np.asarray(V, dtype=np.float64), nan=0.0)
    Z = np.nan_to_num(np.asarray(Z, dtype=np.float64), nan=0.0)
    p, q = V.shape[1], Z.shape[1]
    tasks = [(i, j) for i in range(p) for j in range(q)]
    res = _run(tasks, lambda t: r2_bidirectional(V[:, t[0]], Z[:, t[1]], None,
                                                 pair_seed(seed, *t), **kw).score, workers)
    M = np.array(res, dtype=float).reshape(p, q) if q else np.zeros((p, 0))
    per = M.max(axis=1) if q else np.zeros(p)
    best = [int(np.argmax(M[i])) if q else -1 for i in range(p)]
    return R4Result(float(per.mean()) if p else float("nan"), per, best, M)


@dataclass
class R4cResult:
    score: float
    per_dim: np.ndarray  # NaN for skipped factors
    best: list  # best learned dim name (or "categorical:<name>") per factor
    flags: dict = field(default_factory=dict)


def r4c(V, V_active, Z, Z_hierarchy: DimensionHierarchy, Z_assignments, seed=0,
        workers=None, **kw) -> R4cResult:
    """Hierarchy-aware score.

    For factor ``i`` and learned group ``g`` the score is the best of: the
    bidirectional R^2 between factor ``i`` and each continuous dim of ``g``,
    conditioned on rows where both are active; and, for ``g``'s categorical,
    the child-group scores averaged with weights proportional to how much of
    the factor's active region each child covers. The final score averages
    over factors the value at the root.
    """
    V = np.asarray(V, dtype=np.float64)
    V_active = np.asarray(V_active, dtype=bool)
    Z = np.asarray(Z, dtype=np.float64)
    h = Z_hierarchy
    dims = h.continuous_dims
    if Z.shape[1] != len(dims):
        raise ValueError(f"Z has {Z.shape[1]} columns but hierarchy has {len(dims)} continuous dims")
    on_g = h.group_activity(np.asarray(Z_assignments))
    col = {d: j for j, d in enumerate(dims)}
    p = V.shape[1]
    flags = {}

    # gather every (i, j) pair that the recursion can reach, score them once
    tasks = []
    for i in range(p):
        for key, g in h.groups():
            rows = V_active[:, i] & on_g[key]
            for d in g.continuous:
                tasks.append((i, col[d], rows))
    scores = _run(tasks, lambda t: r2_bidirectional(V[:, t[0]], Z[:, t[1]], t[2],
                                                    pair_seed(seed, t[0], t[1]), **kw), workers)
    direct = {(t[0], t[1]): s for t, s in zip(tasks, scores)}

    def rec(i, key, g):
        rows_n = int((V_active[:, i] & on_g[key]).sum())
        best, label = 0.0, None
        for d in g.continuous:
            r = direct[i, col[d]]
            if r.flag:
                flags.setdefault(i, set()).add(r.flag)
            if r.score > best or label is None:
                best, label = r.score, d
        if g.categorical is not None and rows_n > 0:
            total = 0.0
            for o, opt in enumerate(g.categorical.options):
                ck = key + ((g.categorical.name, o),)
                share = int((V_active[:, i] & on_g[ck]).sum())
                if share:
                    total += rec(i, ck, opt.child)[0] * share / rows_n
            if total > best or label is None:
                best, label = total, f"categorical:{g.categorical.name}"
        return best, label

    per = np.full(p, np.nan)
    best = [None] * p
    for i in range(p):
        if not V_active[:, i].any():
            flags.setdefault(i, set()).add("EMPTY")
            continue
        per[i], best[i] = rec(i, (), h.root)
    ok = ~np.isnan(per)
    score = float(per[ok].mean()) if ok.any() else float("nan")
    return R4cResult(score, per, best, {k: sorted(v) for k, v in flags.items()})


def pairwise_conditional(V, V_active, Z, Z_active, seed=0, workers=None, **kw) -> np.ndarray:
    """R^2 matrix with each pair conditioned on rows where both are active."""
    V = np.asarray(V, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    p, q = V.shape[1], Z.shape[1]
    tasks = [(i, j) for i in range(p) for j in range(q)]
    res = _run(tasks, lambda t: r2_bidirectional(
        V[:, t[0]], Z[:, t[1]], V_active[:, t[0]] & Z_active[:, t[1]],
        pair_seed(seed, *t), **kw).score, workers)
    return np.array(res, dtype=float).reshape(p, q)
