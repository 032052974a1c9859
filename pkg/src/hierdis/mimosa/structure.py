"""Turning manifold components into a dimension hierarchy."""
from __future__ import annotations

import numpy as np
from sklearn.neighbors import BallTree

from ..hierarchy import (
    EMPTY, UNDEFINED, Categorical, DimensionGroup, DimensionHierarchy, Option,
)


def enclosure_ratios(Z, comps, direction: str = "lower-to-higher") -> dict:
    """Normalised distance for every (lower-d, higher-d) component pair.

    Default direction averages, over the lower-dimensional component's points,
    the distance to the nearest point of the higher-dimensional one, then
    divides by the higher component's neighbour lengthscale.
    """
    out = {}
    trees = {}
    for lo, cl in enumerate(comps):
        for hi, ch in enumerate(comps):
            if cl.d >= ch.d:
                continue
            if direction == "lower-to-higher":
                key, src, dst = hi, ch, cl
            else:
                key, src, dst = ("lower", lo), cl, ch
            if key not in trees:
                trees[key] = BallTree(Z[src.members])
            dist, _ = trees[key].query(Z[dst.members], k=1)
            scale = ch.neighbor_lengthscale if ch.neighbor_lengthscale > 0 else np.inf
            out[lo, hi] = float(dist.mean()) / scale
    return out


def enclosure_tree(comps, ratios: dict, mult: float) -> list:
    """Parent component index for each component (-1 for top level).

    Candidate edges run from a lower-d component to a higher-d one that
    encloses it. Edges implied by a longer chain are dropped, then a component
    left with several parents keeps the one with the smallest ratio.
    """
    K = len(comps)
    edges = {(a, b) for (a, b), r in ratios.items() if r <= mult}
    children = {a: {b for (x, b) in edges if x == a} for a in range(K)}

    def reachable(a, b, skip):
        stack = [c for c in children[a] if (a, c) != skip]
        seen = set()
        while stack:
            c = stack.pop()
            if c == b:
                return True
            if c in seen:
                continue
            seen.add(c)
            stack.extend(children[c])
        return False

    edges = {e for e in edges if not reachable(e[0], e[1], skip=e)}
    parent = [-1] * K
    for b in range(K):
        cands = sorted((ratios[a, b], a) for (a, c) in edges if c == b)
        if cands:
            parent[b] = cands[0][1]
    return parent


def tree_to_hierarchy(comps, parent):
    """Build the hierarchy and each component's assignment vector.

    Returns ``(hierarchy, assignment per component)``.
    """
    K = len(comps)
    kids = {k: [c for c in range(K) if parent[c] == k] for k in range(-1, K)}

    def build(c, above):
        dims = tuple(f"c{c}_{j}" for j in range(comps[c].d - above))
        if not kids[c]:
            return DimensionGroup(dims)
        opts = [Option("none", EMPTY)]
        opts += [Option(f"c{ch}", build(ch, comps[c].d)) for ch in kids[c]]
        return DimensionGroup(dims, Categorical(f"c{c}_child", tuple(opts)))

    top = kids[-1]
    if len(top) == 1:
        root = build(top[0], 0)
    else:
        root = DimensionGroup((), Categorical("component", tuple(
            Option(f"c{c}", build(c, 0)) for c in top)))
    h = DimensionHierarchy(root)
    cats = h.categorical_names
    assign = {}
    for c in range(K):
        a = np.full(len(cats), UNDEFINED, dtype=np.int64)
        chain = [c]
        while parent[chain[-1]] >= 0:
            chain.append(parent[chain[-1]])
        chain = chain[::-1]
        if len(top) > 1:
            a[cats.index("component")] = top.index(chain[0])
        for p, ch in zip(chain[:-1], chain[1:]):
            a[cats.index(f"c{p}_child")] = 1 + kids[p].index(ch)
        if kids[c]:
            a[cats.index(f"c{c}_child")] = 0
        assign[c] = a
    return h, assign


def construct_hierarchy(Z, comps, n: int, mult: float = 10.0, direction: str = "lower-to-higher"):
    """Hierarchy, per-point assignments (-1 rows when discarded), covered flags,
    and the parent list of the component tree."""
    ratios = enclosure_ratios(Z, comps, direction)
    parent = enclosure_tree(comps, ratios, mult)
    h, assign = tree_to_hierarchy(comps, parent)
    A = np.full((n, len(h.categorical_names)), UNDEFINED, dtype=np.int64)
    covered = np.zeros(n, dtype=bool)
    for c, comp in enumerate(comps):
        A[comp.members] = assign[c]
        covered[comp.members] = True
    return h, A, covered, parent, ratios
