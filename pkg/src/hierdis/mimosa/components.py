"""Contagion growth of manifold components, edge detection and merging."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.neighbors import BallTree

from .local_svd import LocalBasis, pairwise_tangent_cos

log = logging.getLogger(__name__)


@dataclass
class ManifoldComponent:
    members: np.ndarray
    d: int
    edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    neighbor_lengthscale: float = float("nan")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class ComponentSet:
    components: list
    n: int
    bases: LocalBasis | None = None

    @property
    def labels(self) -> np.ndarray:
        """Component index per point, -1 for discarded points."""
        lab = np.full(self.n, -1, dtype=np.int64)
        for c, comp in enumerate(self.components):
            lab[comp.members] = c
        return lab

    @property
    def covered(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def coverage(self) -> float:
        return float(self.covered.mean()) if self.n else 0.0

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def groups(self) -> list[list[int]]:
        """Disjoint sets, each sorted, ordered by smallest member."""
        out: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            out.setdefault(self.find(x), []).append(x)
        return sorted(out.values(), key=lambda g: g[0])


def mode_dim(dims) -> int:
    """Most common value; ties go to the smaller one."""
    vals, counts = np.unique(np.asarray(dims), return_counts=True)
    return int(vals[np.argmax(counts)])


# -- growth ------------------------------------------------------------------


def similar_edges(neighbors, bases: LocalBasis, thresh: float) -> np.ndarray:
    """Boolean (n, k): is point i's tangent plane similar to its m-th neighbour's."""
    n, k = neighbors.shape
    rows = np.repeat(np.arange(n), k)
    cos = pairwise_tangent_cos(bases, rows, neighbors.ravel())
    return (cos >= thresh).reshape(n, k)


def build_components(neighbors, bases: LocalBasis, cos_simil_thresh: float,
                     contagion_num: int) -> list[ManifoldComponent]:
    """Greedy contagion growth, seeded in ascending index order.

    A seed first takes its own similar neighbours. After that a point joins
    when at least ``contagion_num`` points of its neighbour list are members
    with a similar tangent plane. Points are never reassigned.
    """
    neighbors = np.asarray(neighbors)
    n, k = neighbors.shape
    good = similar_edges(neighbors, bases, cos_simil_thresh)
    # reverse adjacency of good edges: j -> points i that list j as a good neighbour
    src = np.repeat(np.arange(n), k)[good.ravel()]
    dst = neighbors.ravel()[good.ravel()]
    order = np.argsort(dst, kind="stable")
    rev = src[order]
    start = np.searchsorted(dst[order], np.arange(n + 1))

    owner = np.full(n, -1, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    comps = []
    for seed in range(n):
        if owner[seed] >= 0:
            continue
        cid = len(comps)
        owner[seed] = cid
        first = neighbors[seed][good[seed]]
        first = first[owner[first] < 0]
        owner[first] = cid
        members = [np.array([seed]), first]
        wave = np.concatenate(members)
        touched = []
        while len(wave):
            lo, hi = start[wave], start[wave + 1]
            lens = hi - lo
            if lens.sum() == 0:
                break
            pos = np.repeat(lo - np.cumsum(lens) + lens, lens) + np.arange(lens.sum())
            cand = rev[pos]
            np.add.at(count, cand, 1)
            touched.append(cand)
            cand = np.unique(cand)
            new = cand[(owner[cand] < 0) & (count[cand] >= contagion_num)]
            owner[new] = cid
            members.append(new)
            wave = new
        for t in touched:
            count[t] = 0
        m = np.sort(np.concatenate(members))
        comps.append(ManifoldComponent(m, mode_dim(bases.dims[m])))
    return comps


# -- edges -------------------------------------------------------------------


def _direction_edges(Z, members, nbr_local, basis_rows, tol):
    P = Z[members]
    off = P[nbr_local] - P[:, None, :]  # (m, k, D)
    proj = np.einsum("mkd,mrd->mkr", off, basis_rows)  # (m, k, r)
    has_pos = (proj > tol).any(axis=1)
    has_neg = (proj < -tol).any(axis=1)
    return ~(has_pos & has_neg).all(axis=1)


def _hull_edges(Z, members, nbr_local, basis_rows):
    from scipy.spatial import Delaunay
    from scipy.spatial import QhullError

    P = Z[members]
    out = np.zeros(len(members), dtype=bool)
    for i in range(len(members)):
        B = basis_rows[i]
        pts = (P[nbr_local[i]] - P[i]) @ B.T
        try:
            tri = Delaunay(pts)
            out[i] = tri.find_simplex(np.zeros(B.shape[0])) < 0
        except (QhullError, ValueError):
            out[i] = True
    return out


def detect_edges(Z, comp: ManifoldComponent, bases: LocalBasis, k: int,
                 method: str = "direction", tol: float = 1e-9) -> np.ndarray:
    """Global indices of a component's edge points.

    Each member looks at its ``k`` nearest fellow members, expressed in its own
    top-``d`` local SVD directions. The direction check flags a point when some
    direction has neighbours on one side only; the hull variant flags points
    outside the convex hull of their neighbours (``d <= 3`` only).
    """
    members = comp.members
    m = len(members)
    if m == 1:
        return members.copy()
    kk = min(k, m - 1)
    tree = BallTree(Z[members])
    _, nb = tree.query(Z[members], k=kk + 1)
    nb = _drop_self(nb)
    basis_rows = bases.components[members, : comp.d]
    if method == "convex-hull" and comp.d <= 3 and kk > comp.d:
        flag = _hull_edges(Z, members, nb, basis_rows)
    else:
        flag = _direction_edges(Z, members, nb, basis_rows, tol)
    return members[flag]


def _drop_self(nb):
    n = len(nb)
    is_self = nb == np.arange(n)[:, None]
    missing = ~is_self.any(axis=1)
    is_self[missing, -1] = True
    return nb[~is_self].reshape(n, nb.shape[1] - 1)


def neighbor_lengthscale(Z, members) -> float:
    """Mean distance from each member to its nearest fellow member."""
    if len(members) < 2:
        return 0.0
    d, _ = BallTree(Z[members]).query(Z[members], k=2)
    return float(d[:, 1].mean())


def annotate(Z, comps, bases, k, method="direction", tol=1e-9):
    for c in comps:
        c.edges = detect_edges(Z, c, bases, k, method, tol)
        c.neighbor_lengthscale = neighbor_lengthscale(Z, c.members)
    return comps


# -- merging -----------------------------------------------------------------


def edge_match_matrix(Z, comps, bases: LocalBasis, cos_simil_thresh: float,
                      max_dist: float | None = None) -> np.ndarray:
    """M[i, j]: fraction of i's edge points whose nearest edge point of j has a
    similar tangent plane. Only equal-dimensional pairs are scored, and
    full-dimensional ones never match: their tangent space is all of Z, so the
    comparison carries no information."""
    K = len(comps)
    full = Z.shape[1]
    M = np.zeros((K, K))
    trees = [BallTree(Z[c.edges]) if len(c.edges) else None for c in comps]
    for i, ci in enumerate(comps):
        if not len(ci.edges):
            continue
        for j, cj in enumerate(comps):
            if i == j or ci.d != cj.d or ci.d >= full or trees[j] is None:
                continue
            dist, near = trees[j].query(Z[ci.edges], k=1)
            partner = cj.edges[near[:, 0]]
            ok = pairwise_tangent_cos(bases, ci.edges, partner) >= cos_simil_thresh
            if max_dist is not None:
                ok &= dist[:, 0] <= max_dist
            M[i, j] = ok.mean()
    return M


def merge_components(Z, comps, bases: LocalBasis, cfg, n: int) -> list[ManifoldComponent]:
    """Filter tiny components, merge matching equal-d ones, filter again."""
    min_init = cfg.min_size_init * n
    min_merged = cfg.min_size_merged * n
    comps = [c for c in comps if c.size >= min_init]
    annotate(Z, comps, bases, cfg.num_nearest_neighbors, cfg.edge_detection, cfg.edge_tol)
    M = edge_match_matrix(Z, comps, bases, cfg.cos_simil_thresh, cfg.max_edge_match_dist)
    M = (M + M.T) / 2
    uf = UnionFind(len(comps))
    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            if comps[i].d == comps[j].d and M[i, j] >= cfg.min_common_edge_frac(comps[i].d):
                uf.union(i, j)
    merged = []
    for g in uf.groups():
        members = np.sort(np.concatenate([comps[i].members for i in g]))
        merged.append(ManifoldComponent(members, comps[g[0]].d))
    log.info("merged %d components into %d", len(comps), len(merged))
    merged = [c for c in merged if c.size >= min_merged]
    merged.sort(key=lambda c: int(c.members[0]))
    annotate(Z, merged, bases, cfg.num_nearest_neighbors, cfg.edge_detection, cfg.edge_tol)
    return merged
