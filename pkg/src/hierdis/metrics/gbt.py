"""Univariate gradient-boosted trees.

With a single input feature every tree is a piecewise-constant function of
the input's bin, so the whole ensemble is a lookup table over at most
``max_bins`` quantile bins. Each boosting round only touches bin-level sums,
which keeps fitting cheap regardless of sample count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def quantile_edges(x, max_bins: int = 256) -> np.ndarray:
    """Interior bin edges (right-closed bins via searchsorted 'right')."""
    x = np.asarray(x, dtype=np.float64)
    u = np.unique(x)
    if len(u) <= max_bins:
        return (u[:-1] + u[1:]) / 2
    q = np.quantile(x, np.linspace(0, 1, max_bins + 1)[1:-1])
    return np.unique(q)


def _bin(x, edges):
    return np.searchsorted(edges, np.asarray(x, dtype=np.float64), side="left")


def _tree_table(G, H, depth, min_h, reg):
    """Leaf value per bin for one Newton tree over bins.

    Grown level by level: every current segment proposes its best split
    (maximising G_L^2/H_L + G_R^2/H_R over interior bin boundaries) in one
    vectorised pass.
    """
    nb = len(G)
    cg = np.concatenate([[0.0], np.cumsum(G)])
    ch = np.concatenate([[0.0], np.cumsum(H)])
    bounds = np.array([0, nb])
    is_bound = np.zeros(nb + 1, dtype=bool)
    is_bound[[0, nb]] = True
    for _ in range(depth):
        cand = np.flatnonzero(~is_bound[1:nb]) + 1
        if not len(cand):
            break
        seg = np.searchsorted(bounds, cand, side="right") - 1
        lo, hi = bounds[seg], bounds[seg + 1]
        gl, hl = cg[cand] - cg[lo], ch[cand] - ch[lo]
        gr, hr = cg[hi] - cg[cand], ch[hi] - ch[cand]
        gt, ht = gl + gr, hl + hr
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl ** 2 / hl + gr ** 2 / hr - np.where(ht > 0, gt ** 2 / ht, 0.0)
        gain = np.where((hl >= min_h) & (hr >= min_h), gain, -np.inf)
        # best split per segment (first on ties); cand is sorted so
        # segments are contiguous runs
        new_seg = np.empty(len(cand), dtype=bool)
        new_seg[0] = True
        np.not_equal(seg[1:], seg[:-1], out=new_seg[1:])
        starts = np.flatnonzero(new_seg)
        best = np.full(len(bounds), -np.inf)
        best[seg[starts]] = np.maximum.reduceat(gain, starts)
        hit = np.flatnonzero(gain == best[seg])
        hs = seg[hit]
        keep = np.empty(len(hit), dtype=bool)
        keep[0] = True
        np.not_equal(hs[1:], hs[:-1], out=keep[1:])
        pick = hit[keep]
        pick = pick[gain[pick] > 1e-12]
        if not len(pick):
            break
        is_bound[cand[pick]] = True
        bounds = np.flatnonzero(is_bound)
    gs = cg[bounds[1:]] - cg[bounds[:-1]]
    hs = ch[bounds[1:]] - ch[bounds[:-1]]
    with np.errstate(divide="ignore", invalid="ignore"):
        leaf = np.where(hs + reg > 0, -gs / (hs + reg), 0.0)
    return np.repeat(leaf, np.diff(bounds))


@dataclass
class GBTRegressor:
    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    max_bins: int = 256
    min_samples_leaf: int = 1

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        self.edges_ = quantile_edges(x, self.max_bins)
        b = _bin(x, self.edges_)
        nb = len(self.edges_) + 1
        C = np.bincount(b, minlength=nb).astype(float)
        S = np.bincount(b, weights=y, minlength=nb)
        self.base_ = float(y.mean())
        F = np.full(nb, self.base_)
        for _ in range(self.n_estimators):
            # squared loss: gradient F - y, hessian 1
            G = C * F - S
            F = F + self.learning_rate * _tree_table(G, C, self.max_depth, self.min_samples_leaf, 0.0)
        self.table_ = F
        return self

    def predict(self, x):
        return self.table_[_bin(np.asarray(x).ravel(), self.edges_)]


@dataclass
class GBTClassifier:
    """One-vs-rest logistic boosting with Newton leaves."""

    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    max_bins: int = 256
    min_samples_leaf: int = 1

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y).ravel()
        self.classes_ = np.unique(y)
        self.edges_ = quantile_edges(x, self.max_bins)
        b = _bin(x, self.edges_)
        nb = len(self.edges_) + 1
        C = np.bincount(b, minlength=nb).astype(float)
        tables = []
        for c in self.classes_:
            P = np.bincount(b, weights=(y == c).astype(float), minlength=nb)
            prior = np.clip(P.sum() / C.sum(), 1e-6, 1 - 1e-6)
            F = np.full(nb, np.log(prior / (1 - prior)))
            min_h = self.min_samples_leaf * 1e-3
            for _ in range(self.n_estimators):
                p = 1 / (1 + np.exp(-F))
                G = C * p - P
                H = C * p * (1 - p)
                F = F + self.learning_rate * _tree_table(G, H, self.max_depth, min_h, 1e-6)
            tables.append(F)
        self.table_ = np.stack(tables, axis=1)
        return self

    def predict(self, x):
        if len(self.classes_) == 1:
            return np.full(len(np.ravel(x)), self.classes_[0])
        return self.classes_[np.argmax(self.table_[_bin(np.asarray(x).ravel(), self.edges_)], axis=1)]


@dataclass
class PiecewiseConstant:
    """Mean of the target inside each of ``n_bins`` quantile bins."""

    n_bins: int = 20

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        self.edges_ = quantile_edges(x, self.n_bins)
        b = _bin(x, self.edges_)
        nb = len(self.edges_) + 1
        C = np.bincount(b, minlength=nb)
        S = np.bincount(b, weights=y, minlength=nb)
        self.table_ = np.where(C > 0, S / np.maximum(C, 1), y.mean())
        return self

    def predict(self, x):
        return self.table_[_bin(np.asarray(x).ravel(), self.edges_)]


def make_model(kind: str = "gbt", discrete: bool = False, **kw):
    if kind == "gbt":
        return GBTClassifier(**kw) if discrete else GBTRegressor(**kw)
    if kind == "piecewise":
        if discrete:
            raise ValueError("piecewise-constant model has no classifier form")
        return PiecewiseConstant(**kw)
    raise ValueError(f"unknown model kind {kind!r}")
