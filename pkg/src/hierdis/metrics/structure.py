"""Structure-recovery scores: purity, coverage, hierarchy error."""
from __future__ import annotations

from collections import Counter

import numpy as np

from ..hierarchy import DimensionHierarchy


def purity(learned_paths, true_paths, covered=None) -> float:
    """Size-weighted majority agreement of learned paths with true ones.

    ``learned_paths`` and ``true_paths`` are per-point ids; only covered
    points (learned id >= 0 by default) take part.
    """
    learned_paths = np.asarray(learned_paths)
    true_paths = np.asarray(true_paths)
    if covered is None:
        covered = learned_paths >= 0
    lp, tp = learned_paths[covered], true_paths[covered]
    if len(lp) == 0:
        raise ValueError("purity is undefined without covered points")
    majority = 0
    for p in np.unique(lp):
        _, counts = np.unique(tp[lp == p], return_counts=True)
        majority += counts.max()
    return majority / len(lp)


def coverage(covered) -> float:
    covered = np.asarray(covered, dtype=bool)
    return float(covered.mean()) if covered.size else 0.0


def h_error(learned: DimensionHierarchy, truth: DimensionHierarchy) -> int:
    """Number of paths left unpaired when pairing paths with equal
    dimensionality signatures.

    Compatibility is equality of signatures, so a maximum matching pairs
    ``min(count_a, count_b)`` paths within every signature class.
    """
    a = Counter(learned.path_signature(p) for p in learned.paths)
    b = Counter(truth.path_signature(p) for p in truth.paths)
    matched = sum(min(a[s], b[s]) for s in a.keys() & b.keys())
    return sum(a.values()) + sum(b.values()) - 2 * matched


def matching_pairs(learned: DimensionHierarchy, truth: DimensionHierarchy) -> list[tuple[int, int]]:
    """One maximum matching as (learned path index, true path index) pairs."""
    pool: dict[tuple, list[int]] = {}
    for j, p in enumerate(truth.paths):
        pool.setdefault(truth.path_signature(p), []).append(j)
    out = []
    for i, p in enumerate(learned.paths):
        free = pool.get(learned.path_signature(p))
        if free:
            out.append((i, free.pop(0)))
    return out
