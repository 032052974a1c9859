"""k-nearest-neighbour graph over the reduced embedding."""
from __future__ import annotations

import numpy as np
from sklearn.neighbors import BallTree


def _order_rows(dist, idx):
    # stable (distance, index) ordering so duplicate points break ties by index
    keys = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, keys, 1)
    dist = np.take_along_axis(dist, keys, 1)
    keys = np.argsort(dist, axis=1, kind="stable")
    return np.take_along_axis(dist, keys, 1), np.take_along_axis(idx, keys, 1)


def neighbor_graph(Z, k: int, leaf_size: int = 40, return_distance: bool = False):
    """Indices of each point's ``k`` nearest neighbours, self excluded.

    Rows are sorted by distance, ties by index. With duplicated points the
    query may return a twin ahead of the point itself; the point is removed
    wherever it lands, otherwise the farthest candidate is dropped.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = len(Z)
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
    tree = BallTree(Z, leaf_size=leaf_size)
    m = min(n, k + 2)
    dist, idx = tree.query(Z, k=m)
    dist, idx = _order_rows(dist, idx)
    if m > k + 1:
        # the tree picks arbitrarily among points tied at the cut-off
        # distance; rows with a tie just past the cut-off get an exact redo
        tied = np.nonzero(dist[:, k] == dist[:, k + 1])[0]
        if len(tied):
            ind, dd = tree.query_radius(Z[tied], r=dist[tied, k] * (1 + 1e-9) + 1e-300, return_distance=True)
            for row, i, d in zip(tied, ind, dd):
                o = np.lexsort((i, d))[: k + 1]
                dist[row, : k + 1], idx[row, : k + 1] = d[o], i[o]
    dist, idx = dist[:, : k + 1], idx[:, : k + 1]
    is_self = idx == np.arange(n)[:, None]
    missing = ~is_self.any(axis=1)
    is_self[missing, -1] = True
    keep = ~is_self
    idx = idx[keep].reshape(n, k)
    dist = dist[keep].reshape(n, k)
    return (idx, dist) if return_distance else idx


def brute_force_neighbors(Z, k: int):
    """Exhaustive O(n^2) reference used by tests and tiny inputs."""
    Z = np.asarray(Z, dtype=np.float64)
    n = len(Z)
    d2 = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(-1)
    d2[np.arange(n), np.arange(n)] = np.inf
    cols = np.broadcast_to(np.arange(n), d2.shape)
    order = np.lexsort((cols, d2), axis=-1)
    return order[:, :k]
