"""Hierarchy-respecting adversarial autoencoder.

The encoder emits one slot per continuous dim and per categorical option of
a dimension hierarchy. Option blocks go through a temperature softmax and
every slot is scaled by the product of the probabilities of the options above
it, so dims below unlikely options are switched off smoothly. Training adds
assignment supervision and a total-correlation penalty estimated by a
discriminator that tells real codes from codes whose dims were shuffled among
the rows where each dim is active.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import nn
from .hierarchy import UNDEFINED, DimensionHierarchy, flat_hierarchy

log = logging.getLogger(__name__)

MODEL_VERSION = "hierdis-cofhae/1"

ABLATIONS = {
    # name: (hierarchy kind, use assignment loss, tc mode, supervise z)
    "flat": ("flat", False, None, False),
    "hier_h": ("hier", False, None, False),
    "ha": ("hier", True, None, False),
    "ha_tc": ("hier", True, "marginal", False),
    "cofhae": ("hier", True, "conditional", False),
    "h_tc": ("hier", False, "conditional", False),
    "haz": ("hier", True, None, True),
}
TAU_GRID = (1 / 2, 2 / 3, 1.0)
LAMBDA1_GRID = (10.0, 100.0, 1000.0)
LAMBDA2_GRID = (1.0, 10.0, 100.0)


class CofhaeError(RuntimeError):
    pass


@dataclass
class CofhaeConfig:
    tau: float = 2 / 3
    lambda1: float = 100.0
    lambda2: float = 10.0
    lambda_z: float = 100.0
    ablation: str = "cofhae"
    loss: str = "gaussian"
    sigma: float = 0.1
    hidden: tuple = (256, 256)
    activation: str = "relu"
    disc_hidden: tuple = (256, 256)
    disc_lr: float | None = None  # None: same as lr
    disc_betas: tuple = (0.5, 0.9)
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    tau_grid: tuple = TAU_GRID
    lambda1_grid: tuple = LAMBDA1_GRID
    lambda2_grid: tuple = LAMBDA2_GRID

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {sorted(ABLATIONS)}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        for name in ("tau_grid", "lambda1_grid", "lambda2_grid", "hidden", "disc_hidden", "disc_betas"):
            setattr(self, name, tuple(getattr(self, name)))
        if not (self.tau_grid and self.lambda1_grid and self.lambda2_grid):
            raise ValueError("hyperparameter grids must be non-empty")
        nn.LossKind(self.loss, self.sigma)

    @property
    def loss_kind(self) -> nn.LossKind:
        return nn.LossKind(self.loss, self.sigma)

    @property
    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=self.seed)

    def effective(self) -> tuple[float, float]:
        """(lambda1, lambda2) after the ablation's switches."""
        _, use_a, tc, _ = ABLATIONS[self.ablation]
        return (self.lambda1 if use_a else 0.0), (self.lambda2 if tc else 0.0)

    def grid(self) -> list["CofhaeConfig"]:
        return [replace(self, tau=t, lambda1=l1, lambda2=l2)
                for t in self.tau_grid for l1 in self.lambda1_grid for l2 in self.lambda2_grid]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, doc) -> "CofhaeConfig":
        return cls(**doc)


def model_hierarchy(h: DimensionHierarchy, ablation: str) -> DimensionHierarchy:
    """The flat ablation swaps the hierarchy for one group of as many dims."""
    if ABLATIONS[ablation][0] == "flat":
        return flat_hierarchy([f"z{j}" for j in range(len(h.continuous_dims))])
    return h


# -- masked encoding ----------------------------------------------------------


class MaskedLayout:
    """Index bookkeeping for the softmax-and-mask layer."""

    def __init__(self, h: DimensionHierarchy):
        self.hierarchy = h
        lay = h.layout
        self.slots = list(lay.slots)
        self.L = len(self.slots)
        self.cont = np.array([s.index for s in self.slots if s.kind == "continuous"], dtype=np.int64)
        self.opt = np.array([s.index for s in self.slots if s.kind != "continuous"], dtype=np.int64)
        # option blocks in assignment-column order
        self.block_names = list(h.categorical_names)
        self.blocks = [np.asarray(lay.blocks[c], dtype=np.int64) for c in self.block_names]
        self.ancestors = [np.asarray(s.ancestors, dtype=np.int64) for s in self.slots]
        self.cont_names = [self.slots[i].name for i in self.cont]

    @property
    def decoder_order(self) -> np.ndarray:
        """Slot order of the decoder input: option activations, then dims."""
        return np.concatenate([self.opt, self.cont])

    def forward(self, z_pre, tau):
        B = len(z_pre)
        q = np.zeros_like(z_pre)
        for blk in self.blocks:
            logits = z_pre[:, blk] / tau
            logits = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            q[:, blk] = e / e.sum(axis=1, keepdims=True)
        base = z_pre.copy()
        base[:, self.opt] = q[:, self.opt]
        m = np.ones_like(z_pre)
        for s, anc in enumerate(self.ancestors):
            if len(anc):
                m[:, s] = np.prod(q[:, anc], axis=1)
        out = base * m
        return out, (q, base, m, tau)

    def backward(self, cache, g_out):
        q, base, m, tau = cache
        g_base = g_out * m
        g_m = g_out * base
        g_q = np.zeros_like(q)
        g_q[:, self.opt] += g_base[:, self.opt]
        for s, anc in enumerate(self.ancestors):
            if not len(anc):
                continue
            qa = q[:, anc]
            for a in range(len(anc)):
                others = np.prod(np.delete(qa, a, axis=1), axis=1) if len(anc) > 1 else 1.0
                g_q[:, anc[a]] += g_m[:, s] * others
        g = g_base.copy()
        for blk in self.blocks:
            qb, gb = q[:, blk], g_q[:, blk]
            g[:, blk] = qb * (gb - (qb * gb).sum(axis=1, keepdims=True)) / tau
        return g

    def hard_assignments(self, z_pre) -> np.ndarray:
        """Cascaded argmax: each categorical on the chosen path takes its
        largest option; categoricals off the path are -1."""
        h = self.hierarchy
        cats = h.categorical_names
        A = np.full((len(z_pre), len(cats)), UNDEFINED, dtype=np.int64)
        if not cats:
            return A
        choice = {name: np.argmax(z_pre[:, blk], axis=1) for name, blk in zip(self.block_names, self.blocks)}
        # walk the tree: a categorical is defined where its group is active
        def walk(g, on):
            if g.categorical is None:
                return
            c = g.categorical
            j = cats.index(c.name)
            A[on, j] = choice[c.name][on]
            for o, opt in enumerate(c.options):
                walk(opt.child, on & (choice[c.name] == o))
        walk(h.root, np.ones(len(z_pre), dtype=bool))
        return A


def conditional_shuffle(z, active, rng) -> np.ndarray:
    """Permute each column among the rows where it is active.

    Columns active in at most one row are left as they are.
    """
    z = np.array(z, copy=True)
    for j in range(z.shape[1]):
        rows = np.flatnonzero(active[:, j])
        if len(rows) > 1:
            z[rows, j] = z[rng.permutation(rows), j]
    return z


def assignment_targets(layout: MaskedLayout, A) -> tuple[np.ndarray, np.ndarray]:
    """One-hot targets over option slots and a mask of defined entries."""
    A = np.asarray(A)
    B = len(A)
    T = np.zeros((B, len(layout.opt)))
    W = np.zeros((B, len(layout.opt)))
    pos = {s: k for k, s in enumerate(layout.opt)}
    for j, blk in enumerate(layout.blocks):
        a = A[:, j]
        defined = a >= 0
        for o, s in enumerate(blk):
            T[:, pos[s]] = (a == o)
            W[:, pos[s]] = defined
    return T, W


def assignment_loss(a_prime, targets, weights) -> tuple[float, np.ndarray]:
    """Mean over rows of the squared error on defined option slots."""
    B = len(a_prime)
    r = (a_prime - targets) * weights
    return float((r * r).sum() / B), 2 * r / B


# -- model ------------------------------------------------------------------


@dataclass
class HierarchicalAutoencoder:
    hierarchy: DimensionHierarchy
    encoder: nn.DenseNet
    decoder: nn.DenseNet
    tau: float
    discriminator: nn.DenseNet | None = None
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layout = MaskedLayout(self.hierarchy)
        if self.encoder.out_width != self.layout.L:
            raise ValueError("encoder output width must equal the layout length")

    def encode(self, X, batch_size=4096):
        """(z_pre, masked slots, soft mask) for a whole array."""
        zp = nn.encode(self.encoder, X, batch_size).astype(np.float64)
        out, (q, base, m, _) = self.layout.forward(zp, self.tau)
        return zp, out, m

    def hard_assignments(self, X=None, z_pre=None):
        if z_pre is None:
            z_pre = self.encode(X)[0]
        return self.layout.hard_assignments(z_pre)

    def hard_masks(self, A) -> np.ndarray:
        return self.hierarchy.hard_masks(A)

    def decode_slots(self, out):
        """Decode from masked slot values (layout order)."""
        return nn.encode(self.decoder, out[:, self.layout.decoder_order])

    def reconstruct(self, X):
        _, out, _ = self.encode(X)
        return self.decode_slots(out)

    def latents(self, X):
        """Per-point continuous codes for scoring.

        Returns ``(z_pre on continuous slots, hard-masked codes, hard
        assignments, hard activity of continuous slots)``.
        """
        zp, _, _ = self.encode(X)
        A = self.layout.hard_assignments(zp)
        act = self.hierarchy.hard_masks(A)[:, self.layout.cont].astype(bool)
        zc = zp[:, self.layout.cont]
        return zc, zc * act, A, act

    # persistence
    def save(self, out_dir, extra=None):
        os.makedirs(out_dir, exist_ok=True)
        self.encoder.save(os.path.join(out_dir, "encoder.bin"))
        self.decoder.save(os.path.join(out_dir, "decoder.bin"))
        if self.discriminator is not None:
            self.discriminator.save(os.path.join(out_dir, "discriminator.bin"))
        self.hierarchy.save(os.path.join(out_dir, "hierarchy.json"))
        doc = {"version": MODEL_VERSION, "tau": self.tau, "layout": self.hierarchy.layout.names,
               "config": self.config, "metrics": self.metrics}
        doc.update(extra or {})
        with open(os.path.join(out_dir, "model.json"), "w") as f:
            json.dump(doc, f, indent=2)

    @classmethod
    def load(cls, in_dir) -> "HierarchicalAutoencoder":
        with open(os.path.join(in_dir, "model.json")) as f:
            doc = json.load(f)
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        disc = os.path.join(in_dir, "discriminator.bin")
        return cls(DimensionHierarchy.load(os.path.join(in_dir, "hierarchy.json")),
                   nn.DenseNet.load(os.path.join(in_dir, "encoder.bin")),
                   nn.DenseNet.load(os.path.join(in_dir, "decoder.bin")),
                   float(doc["tau"]),
                   nn.DenseNet.load(disc) if os.path.exists(disc) else None,
                   doc.get("config", {}), doc.get("metrics", {}))


def build_model(h: DimensionHierarchy, in_width: int, cfg: CofhaeConfig) -> HierarchicalAutoencoder:
    L = len(h.layout)
    n_cont = len(h.continuous_dims)
    enc = nn.DenseNet([in_width, *cfg.hidden, L], cfg.activation, "identity", seed=cfg.seed)
    dec = nn.DenseNet([L, *cfg.hidden[::-1], in_width], cfg.activation, "identity", seed=cfg.seed + 1)
    disc = nn.DenseNet([max(n_cont, 1), *cfg.disc_hidden, 1], "relu", "identity", seed=cfg.seed + 2)
    return HierarchicalAutoencoder(h, enc, dec, cfg.tau, disc, cfg.to_dict())


# -- training ---------------------------------------------------------------


def _disc_grad(disc, z, act, rng):
    """Discriminator loss and gradients: shuffled codes -> 1, real codes -> 0."""
    B = len(z)
    zs = conditional_shuffle(z, act, rng)
    logit, cache = disc.forward(np.concatenate([z, zs]).astype(disc.dtype), return_cache=True)
    lr_, ls_ = logit[:B, 0].astype(np.float64), logit[B:, 0].astype(np.float64)
    loss = float((nn.softplus(-ls_) + nn.softplus(lr_)).mean())
    g_logit = np.concatenate([nn.sigmoid(lr_), -nn.sigmoid(-ls_)])[:, None] / B
    g, _ = disc.backward(cache, g_logit.astype(disc.dtype))
    return loss, g, lr_, ls_


def _batch_step(model, xb, ab, vb, vmask, cfg, lam1, lam2, lam_z, tc_mode, rng):
    """Losses and gradients for one minibatch.

    Returns (losses dict, encoder grads, decoder grads, discriminator grads).
    """
    lay = model.layout
    B = len(xb)
    zp, ec = model.encoder.forward(xb, return_cache=True)
    zp = zp.astype(np.float64)
    out, mc = lay.forward(zp, model.tau)
    dec_in = out[:, lay.decoder_order].astype(model.decoder.dtype)
    xr, dc = model.decoder.forward(dec_in, return_cache=True)
    lx, gx = nn.loss_and_grad(cfg.loss_kind, xr, xb)
    g_dec_params, g_dec_in = model.decoder.backward(dc, gx)
    g_out = np.zeros_like(out)
    g_out[:, lay.decoder_order] = g_dec_in

    losses = {"recon": lx}
    if lam1 > 0 and len(lay.opt):
        T, W = assignment_targets(lay, ab)
        la, ga = assignment_loss(out[:, lay.opt], T, W)
        g_out[:, lay.opt] += lam1 * ga
        losses["assign"] = la

    g_disc = None
    if tc_mode is not None and len(lay.cont):
        z = out[:, lay.cont]
        if tc_mode == "marginal":
            act = np.ones_like(z, dtype=bool)
        else:
            act = model.hierarchy.hard_masks(lay.hard_assignments(zp))[:, lay.cont].astype(bool)
        disc = model.discriminator
        losses["disc"], g_disc, lr_, ls_ = _disc_grad(disc, z, act, rng)
        # encoder side: minimise -lambda2 * logit(real)
        _, cache_r = disc.forward(z.astype(disc.dtype), return_cache=True)
        _, gz = disc.backward(cache_r, np.full((B, 1), -lam2 / B, dtype=disc.dtype))
        g_out[:, lay.cont] += gz
        losses["tc"] = float(lr_.mean())
        losses["disc_acc"] = float(((lr_ < 0).mean() + (ls_ > 0).mean()) / 2)

    g_zp = lay.backward(mc, g_out)
    if lam_z > 0 and vb is not None:
        # supervised codes: z_pre on continuous slots matches the factor where active
        r = (zp[:, lay.cont] - vb) * vmask
        losses["z_sup"] = float((r * r).sum() / B)
        g_zp[:, lay.cont] += lam_z * 2 * r / B
    g_enc_params, _ = model.encoder.backward(ec, g_zp.astype(model.encoder.dtype))
    return losses, g_enc_params, g_dec_params, g_disc


def evaluate_losses(model: HierarchicalAutoencoder, X, A, cfg: CofhaeConfig, batch_size=4096) -> dict:
    """Mean reconstruction and assignment loss over a dataset."""
    lay = model.layout
    tot_x = tot_a = 0.0
    for s in range(0, len(X), batch_size):
        xb = np.asarray(X[s:s + batch_size], dtype=np.float32)
        zp, out, _ = model.encode(xb)
        xr = model.decode_slots(out)
        tot_x += nn.per_sample_loss(cfg.loss_kind, xr, xb).sum()
        if len(lay.opt):
            T, W = assignment_targets(lay, A[s:s + batch_size])
            r = (out[:, lay.opt] - T) * W
            tot_a += (r * r).sum()
    n = len(X)
    return {"recon": float(tot_x / n), "assign": float(tot_a / n)}


def train_cofhae(X, h: DimensionHierarchy, A, cfg: CofhaeConfig, V=None) -> HierarchicalAutoencoder:
    """Alternating minibatch descent for the autoencoder and discriminator.

    ``A`` rows that are all -1 (points with no assignment) train on
    reconstruction only. ``V`` (factor values, NaN when inactive, columns in
    the hierarchy's continuous-dim order) is needed only by the ``haz``
    ablation.
    """
    X = np.asarray(X, dtype=np.float32)
    kind, use_a, tc_mode, sup_z = ABLATIONS[cfg.ablation]
    mh = model_hierarchy(h, cfg.ablation)
    A = np.asarray(A, dtype=np.int64)
    if kind == "flat":
        A = np.zeros((len(X), 0), dtype=np.int64)
    lam1, lam2 = cfg.effective()
    lam_z = cfg.lambda_z if sup_z else 0.0
    if sup_z:
        if V is None:
            raise ValueError("the haz ablation needs factor values V")
        V = np.asarray(V, dtype=np.float64)
        if V.shape[1] != len(mh.continuous_dims):
            raise ValueError("V columns must match the hierarchy's continuous dims")
        Vmask = ~np.isnan(V)
        V = np.nan_to_num(V)
    model = build_model(mh, X.shape[1], cfg)
    tc = cfg.train_config
    n = len(X)
    steps = -(-n // tc.batch_size)
    total = tc.epochs * steps
    rng = np.random.default_rng(cfg.seed)
    shuf_rng = np.random.default_rng([cfg.seed, 7])
    opt_ae = nn.Adam(model.encoder.params + model.decoder.params, tc)
    b1, b2 = cfg.disc_betas
    disc_tc = replace(tc, lr=cfg.disc_lr or tc.lr, beta1=b1, beta2=b2)
    opt_d = nn.Adam(model.discriminator.params, disc_tc)
    history = []
    step = 0
    for epoch in range(tc.epochs):
        acc = {}
        for idx in nn.minibatches(n, tc.batch_size, rng):
            vb = V[idx] if sup_z else None
            vm = Vmask[idx] if sup_z else None
            losses, ge, gd, gdisc = _batch_step(model, X[idx], A[idx], vb, vm, cfg,
                                                lam1, lam2, lam_z, tc_mode if lam2 > 0 else None, shuf_rng)
            if not all(math.isfinite(v) for v in losses.values()):
                raise nn.TrainingDivergedError(epoch, f"non-finite loss {losses}")
            lr = nn.learning_rate(tc, step, total)
            opt_ae.step(ge + gd, lr)
            if gdisc is not None:
                opt_d.step(gdisc, nn.learning_rate(disc_tc, step, total))
            step += 1
            for k, v in losses.items():
                acc[k] = acc.get(k, 0.0) + v * len(idx)
        history.append({k: v / n for k, v in acc.items()})
        log.debug("epoch %d %s", epoch, history[-1])
    model.metrics = {"history": history, **evaluate_losses(model, X, A, cfg)}
    return model


# -- selection --------------------------------------------------------------


def select_model(results: list) -> int:
    """Index of the chosen run.

    ``results`` holds dicts with ``assign`` and ``recon`` entries, in config
    order. The lowest-assignment-loss third (rounded up) survives, and the
    survivor with the lowest reconstruction loss wins; ties keep config order.
    """
    if not results:
        raise CofhaeError("no trained models to select from")
    n = len(results)
    keep = math.ceil(n / 3)
    order = sorted(range(n), key=lambda i: (results[i]["assign"], i))[:keep]
    return min(order, key=lambda i: (results[i]["recon"], i))


def factor_targets(ds_V, ds_hierarchy: DimensionHierarchy, h: DimensionHierarchy):
    """Reorder ground-truth factor columns to ``h``'s continuous-dim order."""
    src = ds_hierarchy.continuous_dims
    return np.asarray(ds_V)[:, [src.index(d) for d in h.continuous_dims]]


def score_model(model: HierarchicalAutoencoder, X, V, V_active, seed=0, workers=None, with_r4=True):
    """R^4_c (z_pre on hard-active rows) and R^4 (hard-masked codes)."""
    from .metrics import r4, r4c

    zc, zmasked, A_hat, _ = model.latents(X)
    c = r4c(V, V_active, zc, model.hierarchy, A_hat, seed=seed, workers=workers)
    out = {"r4c": c.score, "r4c_per_dim": c.per_dim.tolist(), "r4c_best": c.best, "flags": c.flags}
    if with_r4:
        f = r4(np.where(V_active, V, 0.0), zmasked, seed=seed, workers=workers)
        out.update(r4=f.score, r4_per_dim=f.per_dim.tolist(), pairwise=f.matrix)
    return out
