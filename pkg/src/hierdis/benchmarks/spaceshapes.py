"""Spaceshapes: binary 64x64 images of moons, stars and ships.

Factor hierarchy::

    {x, y} + shape
        moon -> {phase}
        star -> {shine}
        ship -> {angle} + jet
                    none -> {}
                    jet  -> {jetlen}

A pixel is on when its centre lies inside the shape. ``x`` is the column
coordinate and ``y`` the row coordinate, both in pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..hierarchy import (
    EMPTY, Categorical, DimensionGroup, DimensionHierarchy, Option, UNDEFINED,
)
from .dataset import LabeledDataset

SIDE = 64
RADIUS = 8.0
SHIP_BASE = 10.0
SHIP_HEIGHT = 16.0
SHIP_NOSE = 10.0  # nose distance ahead of (x, y); the stern sits 6 px behind
JET_WIDTH = 3.0

RANGES = {
    "x": (16.0, 48.0),
    "y": (16.0, 48.0),
    "phase": (0.0, 0.95),
    "shine": (0.2, 0.8),
    "angle": (-60.0, 60.0),
    "jetlen": (2.0, 10.0),
}
SHAPES = ("moon", "star", "ship")

_cy, _cx = np.mgrid[0:SIDE, 0:SIDE]
PX = (_cx + 0.5).ravel()
PY = (_cy + 0.5).ravel()


class FactorRangeError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceshapesConfig:
    n_samples: int = 10000
    seed: int = 0
    side: int = SIDE

    def __post_init__(self):
        if self.side != SIDE:
            raise ValueError("only 64x64 images are supported")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")

    def to_dict(self) -> dict:
        return {"dataset": "spaceshapes", **asdict(self)}


def ground_truth_hierarchy(cfg: SpaceshapesConfig | None = None) -> DimensionHierarchy:
    jet = Categorical("jet", (Option("none", EMPTY), Option("jet", DimensionGroup(("jetlen",)))))
    shape = Categorical("shape", (
        Option("moon", DimensionGroup(("phase",))),
        Option("star", DimensionGroup(("shine",))),
        Option("ship", DimensionGroup(("angle",), jet)),
    ))
    return DimensionHierarchy(DimensionGroup(("x", "y"), shape))


def alternative_hierarchies() -> dict:
    """Three equivalent ways to write the Spaceshapes structure.

    ``canonical`` is the generator's tree; ``merged`` folds phase, shine and
    angle into one top-level "pose" dim; ``pushed`` copies x and y into each
    shape. Values for the variants come from :func:`hierdis.hierarchy.reexpress`
    with the returned mappings.
    """
    from ..hierarchy import merge_up, push_down

    h = ground_truth_hierarchy()
    merged, m1 = merge_up(h, ["phase", "shine", "angle"], name="pose")
    pushed, m2 = push_down(h, "x")
    pushed, m3 = push_down(pushed, "y")
    m2 = {k: [o for s in v for o in m2.get(s, [s])] for k, v in m3.items()}
    ident = {d: [d] for d in h.continuous_dims}
    return {"canonical": (h, ident), "merged": (merged, m1), "pushed": (pushed, m2)}


def _in_convex(px, py, verts) -> np.ndarray:
    """Pixel centres inside (or on) a convex polygon, any winding."""
    verts = np.asarray(verts, dtype=float)
    pos = np.ones(px.shape, dtype=bool)
    neg = np.ones(px.shape, dtype=bool)
    for (x0, y0), (x1, y1) in zip(verts, np.roll(verts, -1, axis=0)):
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        pos &= cross >= -1e-12
        neg &= cross <= 1e-12
    return pos | neg


def _check(name, value):
    lo, hi = RANGES[name]
    if not (lo <= value <= hi):
        raise FactorRangeError(f"{name}={value} outside [{lo}, {hi}]")


def _moon(x, y, phase):
    d = 2 * RADIUS * (1 - phase)
    inside = (PX - x) ** 2 + (PY - y) ** 2 <= RADIUS ** 2
    occluded = (PX - x - d) ** 2 + (PY - y) ** 2 < RADIUS ** 2
    return inside & ~occluded


def star_vertices(x, y, shine):
    verts = []
    for k in range(5):
        a = np.deg2rad(-90 + 72 * k)
        b = a + np.deg2rad(36)
        verts.append((x + RADIUS * np.cos(a), y + RADIUS * np.sin(a)))
        verts.append((x + shine * RADIUS * np.cos(b), y + shine * RADIUS * np.sin(b)))
    return np.array(verts)


def _star(x, y, shine):
    v = star_vertices(x, y, shine)
    c = (x, y)
    out = np.zeros(PX.shape, dtype=bool)
    for j in range(len(v)):
        out |= _in_convex(PX, PY, [c, v[j], v[(j + 1) % len(v)]])
    return out


def _ship_frame(x, y, angle):
    a = np.deg2rad(angle)
    fwd = np.array([np.sin(a), -np.cos(a)])  # angle 0 points up the image
    side = np.array([np.cos(a), np.sin(a)])
    c = np.array([x, y])
    return lambda u, v: tuple(c + u * side + v * fwd)


def _ship(x, y, angle, jetlen=None):
    at = _ship_frame(x, y, angle)
    stern = SHIP_NOSE - SHIP_HEIGHT
    hull = [at(0, SHIP_NOSE), at(SHIP_BASE / 2, stern), at(-SHIP_BASE / 2, stern)]
    out = _in_convex(PX, PY, hull)
    if jetlen is not None:
        w = JET_WIDTH / 2
        jet = [at(-w, stern), at(w, stern), at(w, stern - jetlen), at(-w, stern - jetlen)]
        out |= _in_convex(PX, PY, jet)
    return out


def render_spaceshape(shape: str, x: float, y: float, phase=None, shine=None,
                      angle=None, jetlen=None) -> np.ndarray:
    """Rasterise one shape to a (64, 64) uint8 image of 0/1."""
    _check("x", x)
    _check("y", y)
    if shape == "moon":
        _check("phase", phase)
        m = _moon(x, y, phase)
    elif shape == "star":
        _check("shine", shine)
        m = _star(x, y, shine)
    elif shape == "ship":
        _check("angle", angle)
        if jetlen is not None:
            _check("jetlen", jetlen)
        m = _ship(x, y, angle, jetlen)
    else:
        raise FactorRangeError(f"unknown shape {shape!r}")
    return m.reshape(SIDE, SIDE).astype(np.uint8)


def generate_spaceshapes(cfg: SpaceshapesConfig) -> LabeledDataset:
    h = ground_truth_hierarchy(cfg)
    n = cfg.n_samples
    # one private row of uniforms per sample: shape, jet, x, y, phase, shine, angle, jetlen
    U = np.random.default_rng(cfg.seed).random((n, 8))
    shape = np.minimum((U[:, 0] * 3).astype(int), 2)
    has_jet = (shape == 2) & (U[:, 1] < 0.5)

    def scale(name, u):
        lo, hi = RANGES[name]
        return lo + (hi - lo) * u

    vals = {k: scale(k, U[:, j]) for j, k in enumerate(("x", "y", "phase", "shine", "angle", "jetlen"), start=2)}
    dims = h.continuous_dims
    V = np.full((n, len(dims)), np.nan)
    V[:, dims.index("x")] = vals["x"]
    V[:, dims.index("y")] = vals["y"]
    for s, name in enumerate(("phase", "shine", "angle")):
        rows = shape == s
        V[rows, dims.index(name)] = vals[name][rows]
    V[has_jet, dims.index("jetlen")] = vals["jetlen"][has_jet]

    A = np.full((n, 2), UNDEFINED, dtype=np.int64)
    A[:, 0] = shape
    A[shape == 2, 1] = has_jet[shape == 2].astype(int)

    X = np.zeros((n, SIDE * SIDE), dtype=np.float32)
    for i in range(n):
        x, y = vals["x"][i], vals["y"][i]
        if shape[i] == 0:
            m = _moon(x, y, vals["phase"][i])
        elif shape[i] == 1:
            m = _star(x, y, vals["shine"][i])
        else:
            m = _ship(x, y, vals["angle"][i], vals["jetlen"][i] if has_jet[i] else None)
        X[i] = m
    return LabeledDataset(X=X, V=V, A=A, hierarchy=h, config=cfg.to_dict())


# -- pixel-set monotonicity checks --------------------------------------------

SWEEP_STEPS = 25
MONOTONE_CASES = [
    ("moon", "x", dict(y=30.0, phase=0.3)), ("moon", "y", dict(x=30.0, phase=0.3)),
    ("star", "x", dict(y=30.0, shine=0.5)), ("ship", "y", dict(x=30.0, angle=20.0)),
    ("moon", "phase", {}), ("star", "shine", {}), ("ship", "angle", {}),
    ("ship", "angle", dict(jetlen=6.0)), ("ship", "jetlen", dict(angle=-35.0)),
    ("ship", "jetlen", dict(angle=10.0)),
]
SWEEP_ANCHORS = [dict(x=24.3, y=31.7), dict(x=40.1, y=22.9), dict(x=30.0, y=40.5)]


def centroid(img):
    r, c = np.nonzero(img)
    return c.mean() + 0.5, r.mean() + 0.5


def orientation(img) -> float:
    """Heading in degrees (0 = up, clockwise positive) of the principal axis,
    signed toward the skewed (nose) side."""
    r, c = np.nonzero(img)
    x, y = c + 0.5 - (c + 0.5).mean(), r + 0.5 - (r + 0.5).mean()
    _, v = np.linalg.eigh(np.cov(np.stack([x, y])))
    ax = v[:, -1]
    if ((ax[0] * x + ax[1] * y) ** 3).sum() > 0:
        ax = -ax
    return float(np.rad2deg(np.arctan2(ax[0], -ax[1])))


def _nested(imgs, grow):
    pairs = zip(imgs[:-1], imgs[1:])
    return all(np.all(b >= a) if grow else np.all(b <= a) for a, b in pairs)


def factor_is_monotone(shape: str, factor: str, fixed: dict, steps: int = SWEEP_STEPS) -> bool:
    """Sweep one factor over its range and test its effect on the pixel set.

    Position moves the centroid strictly; phase shrinks and shine/jetlen grow
    the set by inclusion; angle turns the principal axis monotonically (within
    the raster's angular resolution) through more than 100 degrees.
    """
    lo, hi = RANGES[factor]
    imgs = [render_spaceshape(shape, **{**fixed, factor: v}) for v in np.linspace(lo, hi, steps)]
    counts = [int(i.sum()) for i in imgs]
    if factor in ("x", "y"):
        k = 0 if factor == "x" else 1
        return bool(np.all(np.diff([centroid(i)[k] for i in imgs]) > 0))
    if factor == "phase":
        return _nested(imgs, grow=False) and counts[-1] < counts[0]
    if factor in ("shine", "jetlen"):
        return _nested(imgs, grow=True) and counts[-1] > counts[0]
    if factor == "angle":
        ang = np.rad2deg(np.unwrap(np.deg2rad([orientation(i) for i in imgs])))
        return bool(np.all(np.diff(ang) > -2.5) and ang[-1] - ang[0] > 100)
    raise KeyError(factor)


def monotonicity_report(steps: int = SWEEP_STEPS) -> dict:
    """{(shape, factor, anchor index): passed} over every case and anchor."""
    out = {}
    for shape, factor, fixed in MONOTONE_CASES:
        for a, anchor in enumerate(SWEEP_ANCHORS):
            base = {k: v for k, v in anchor.items() if k != factor}
            out[shape, factor, a] = factor_is_monotone(shape, factor, {**base, **fixed}, steps)
    return out
