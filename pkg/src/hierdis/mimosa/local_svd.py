"""Per-point local SVD and tangent-plane similarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LocalBasis:
    """Per-point SVD of the local neighbourhood.

    ``components[i]`` holds all right singular vectors of point ``i`` as rows,
    strongest first; the retained basis is its first ``dims[i]`` rows.
    """

    components: np.ndarray  # (n, D, D)
    dims: np.ndarray  # (n,)
    eigenvalues: np.ndarray  # (n, D)

    def basis(self, i: int) -> np.ndarray:
        return self.components[i, : self.dims[i]]

    def __len__(self):
        return len(self.dims)


def choose_dim(eig: np.ndarray, cumsum_thresh: float, decay_thresh: float) -> np.ndarray:
    """Smallest d whose eigenvalues explain enough variance and are followed
    by a large enough drop; the full dimensionality otherwise."""
    eig = np.atleast_2d(eig)
    n, D = eig.shape
    total = eig.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        cum = np.cumsum(eig, axis=1) / total
        ratio = eig[:, :-1] / eig[:, 1:]
    ratio = np.where(eig[:, 1:] <= 0, np.where(eig[:, :-1] > 0, np.inf, 0.0), ratio)
    ok = (cum[:, :-1] >= cumsum_thresh) & (ratio >= decay_thresh)
    ok = ok & (total > 0)
    first = np.where(ok.any(axis=1), ok.argmax(axis=1) + 1, D)
    return first


def _svd(P):
    """Centre each neighbourhood and return (eigenvalues, right vectors)."""
    C = P - P.mean(axis=1, keepdims=True)
    _, s, vt = np.linalg.svd(C, full_matrices=False)
    return s * s, vt


def local_svd_block(P, ransac_frac=2 / 3, cumsum_thresh=0.95, decay_thresh=4.0):
    """Local SVD for a stack of neighbourhoods ``P`` of shape (m, k, D).

    With ``ransac_frac < 1`` a two-step refit is done: every point's residual
    is measured under each truncation level, the residual norms across levels
    are ranked, and the SVD is refitted on points at or below the
    ``100 * ransac_frac`` percentile.
    """
    P = np.asarray(P, dtype=np.float64)
    m, k, D = P.shape
    eig, vt = _svd(P)
    if ransac_frac < 1:
        C = P - P.mean(axis=1, keepdims=True)
        coef = C @ np.swapaxes(vt, 1, 2)  # (m, k, D) coordinates in the basis
        # residual after keeping the first j directions = norm of the rest;
        # tail[..., j] is its square
        tail = np.cumsum((coef ** 2)[:, :, ::-1], axis=2)[:, :, ::-1]
        err = np.sqrt(tail[:, :, 1:].sum(axis=2))  # truncation levels 1 .. D-1
        n_keep = max(min(D + 1, k), int(np.ceil(ransac_frac * k)))
        n_keep = min(n_keep, k)
        order = np.argsort(err, axis=1, kind="stable")[:, :n_keep]
        inliers = np.take_along_axis(P, order[:, :, None], axis=1)
        eig, vt = _svd(inliers)
    if eig.shape[1] < D:  # fewer points than dimensions
        pad = D - eig.shape[1]
        eig = np.pad(eig, ((0, 0), (0, pad)))
        full = np.zeros((m, D, D))
        for i in range(m):
            full[i] = _complete(vt[i], D)
        vt = full
    dims = choose_dim(eig, cumsum_thresh, decay_thresh)
    return vt, dims, eig


def _complete(rows, D):
    out = np.zeros((D, D))
    out[: len(rows)] = rows
    fill = len(rows)
    for e in np.eye(D):
        if fill == D:
            break
        v = e - out[:fill].T @ (out[:fill] @ e)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            out[fill] = v / nv
            fill += 1
    return out


def local_svd(Z, neighbors, ransac_frac=2 / 3, cumsum_thresh=0.95, decay_thresh=4.0,
              chunk: int = 20000) -> LocalBasis:
    """Local SVD of every point over itself plus its neighbour list."""
    Z = np.asarray(Z, dtype=np.float64)
    n, D = Z.shape
    nb = np.concatenate([np.arange(n)[:, None], neighbors], axis=1)
    comps = np.empty((n, D, D))
    dims = np.empty(n, dtype=np.int64)
    eigs = np.empty((n, D))
    for s in range(0, n, chunk):
        sl = slice(s, min(n, s + chunk))
        vt, d, e = local_svd_block(Z[nb[sl]], ransac_frac, cumsum_thresh, decay_thresh)
        comps[sl], dims[sl], eigs[sl] = vt, d, e
    return LocalBasis(comps, dims, eigs)


def tangent_plane_cos(U, V) -> float:
    """|det(U V^T)| for equal-dimensional orthonormal row bases, else 0."""
    U = np.atleast_2d(U)
    V = np.atleast_2d(V)
    if U.shape != V.shape:
        return 0.0
    return float(abs(np.linalg.det(U @ V.T)))


def pairwise_tangent_cos(bases: LocalBasis, i, j, chunk: int = 200000) -> np.ndarray:
    """Vectorised :func:`tangent_plane_cos` over index pairs ``(i[t], j[t])``."""
    i = np.asarray(i).ravel()
    j = np.asarray(j).ravel()
    out = np.zeros(len(i))
    di = bases.dims[i]
    same = di == bases.dims[j]
    for d in np.unique(di[same]):
        sel = np.flatnonzero(same & (di == d))
        for s in range(0, len(sel), chunk):
            t = sel[s:s + chunk]
            U = bases.components[i[t], :d]
            V = bases.components[j[t], :d]
            out[t] = np.abs(np.linalg.det(U @ np.swapaxes(V, 1, 2)))
    return out
