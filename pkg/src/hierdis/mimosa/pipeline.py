"""End-to-end structure discovery."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..hierarchy import DimensionHierarchy
from .components import ComponentSet, build_components, merge_components
from .config import MimosaConfig
from .local_svd import LocalBasis, local_svd
from .neighbors import neighbor_graph
from .structure import construct_hierarchy

log = logging.getLogger(__name__)


class StructureNotFoundError(RuntimeError):
    pass


@dataclass
class MimosaResult:
    hierarchy: DimensionHierarchy
    assignments: np.ndarray  # -1 rows for discarded points
    covered: np.ndarray
    components: ComponentSet
    encoder: nn.DenseNet | None
    decoder: nn.DenseNet | None
    Z: np.ndarray
    parent: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    ae_history: list = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())

    @property
    def path_ids(self) -> np.ndarray:
        ids = self.hierarchy.path_ids(self.assignments)
        return np.where(self.covered, ids, -1)


def _pick_loss(X, kind):
    if kind != "auto":
        return nn.LossKind(kind)
    binary = np.isin(X[: min(len(X), 2000)], (0, 1)).all()
    return nn.LossKind("bernoulli" if binary else "gaussian")


def reduce(X, initial_dim: int, cfg: MimosaConfig = MimosaConfig()):
    """Encode X with a smooth (softplus) autoencoder.

    Returns ``(Z, encoder, decoder, loss history)``.
    """
    if initial_dim < 1:
        raise ValueError("initial_dim must be positive")
    X = np.asarray(X, dtype=np.float32)
    D = X.shape[1]
    widths = [D, *cfg.ae_hidden, initial_dim]
    enc = nn.DenseNet(widths, "softplus", "identity", seed=cfg.seed)
    dec = nn.DenseNet(widths[::-1], "softplus", "identity", seed=cfg.seed + 1)
    tc = nn.TrainConfig(epochs=cfg.ae_epochs, batch_size=cfg.ae_batch_size, seed=cfg.seed)
    res = nn.train_autoencoder(enc, dec, X, tc, _pick_loss(X, cfg.ae_loss))
    return nn.encode(res.encoder, X).astype(np.float64), res.encoder, res.decoder, res.history


def discover(Z, cfg: MimosaConfig, timings: dict | None = None):
    """Everything after the embedding: graph, local SVD, components, hierarchy."""
    timings = {} if timings is None else timings
    n = len(Z)
    t = time.perf_counter()
    nbrs = neighbor_graph(Z, cfg.num_nearest_neighbors)
    timings["neighbors"] = time.perf_counter() - t

    t = time.perf_counter()
    bases: LocalBasis = local_svd(Z, nbrs, cfg.ransac_frac, cfg.eig_cumsum_thresh, cfg.eig_decay_thresh)
    timings["local_svd"] = time.perf_counter() - t

    t = time.perf_counter()
    comps = build_components(nbrs, bases, cfg.cos_simil_thresh, cfg.contagion_num)
    timings["build"] = time.perf_counter() - t
    log.info("%d initial components", len(comps))

    t = time.perf_counter()
    merged = merge_components(Z, comps, bases, cfg, n)
    timings["merge"] = time.perf_counter() - t
    if not merged:
        raise StructureNotFoundError(
            f"no component survived merging ({len(comps)} initial, largest "
            f"{max((c.size for c in comps), default=0)} points; need {cfg.min_size_merged * n:.0f})")

    t = time.perf_counter()
    h, A, covered, parent, _ = construct_hierarchy(
        Z, merged, n, cfg.neighbor_lengthscale_mult, cfg.enclosure_direction)
    timings["hierarchy"] = time.perf_counter() - t
    return h, A, covered, ComponentSet(merged, n, bases), parent


def run_mimosa(X, cfg: MimosaConfig, Z=None) -> MimosaResult:
    """Discover a dimension hierarchy and per-point assignments from raw X.

    Pass ``Z`` to skip the autoencoder and use a given embedding.
    """
    X = np.asarray(X)
    if len(X) <= cfg.num_nearest_neighbors:
        raise ValueError("need more points than num_nearest_neighbors")
    timings = {}
    enc = dec = None
    hist = []
    if Z is None:
        if cfg.initial_dim is None:
            raise ValueError("initial_dim must be set when no embedding is given")
        t = time.perf_counter()
        Z, enc, dec, hist = reduce(X, cfg.initial_dim, cfg)
        timings["reduce"] = time.perf_counter() - t
    Z = np.asarray(Z, dtype=np.float64)
    h, A, covered, comps, parent = discover(Z, cfg, timings)
    return MimosaResult(h, A, covered, comps, enc, dec, Z, parent, timings, hist)
