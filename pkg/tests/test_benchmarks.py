import numpy as np
import pytest

from hierdis.benchmarks import (
    ChopsticksConfig, SpaceshapesConfig, generate_chopsticks, generate_spaceshapes,
    read_dataset, render_spaceshape, write_dataset,
)
from hierdis.benchmarks.chopsticks import (
    T, ConfigError, continue_probability, reconstruct_from_factors, render_series,
)
from hierdis.benchmarks import spaceshapes
from hierdis.benchmarks.spaceshapes import (
    MONOTONE_CASES, RANGES, SWEEP_ANCHORS, FactorRangeError, factor_is_monotone,
)

# -- chopsticks --------------------------------------------------------------


def test_constant_series():
    x = render_series(0.0, 0.3, np.zeros((1, 1)), np.zeros((1, 1)))
    assert np.all(x == 0.3)


def test_one_chop_formula():
    s, b, ds, db = 0.4, -0.2, 0.7, 0.1
    x = render_series(s, b, [[ds]], [[db]])[0]
    left = T <= 0.5
    assert np.allclose(x[left], b + s * T[left])
    assert np.allclose(x[~left], (b + db) + (s + ds) * T[~left])


def test_continue_probabilities_give_uniform_levels():
    D = 4
    reach = 1.0
    probs = []
    for k in range(1, D):
        p = continue_probability(k, D)
        probs.append(reach * (1 - p))
        reach *= p
    probs.append(reach)
    assert np.allclose(probs, 1 / D)


def test_stop_level_monte_carlo():
    ds = generate_chopsticks(ChopsticksConfig("both", 3, 100_000, seed=1))
    freq = np.bincount(ds.path_ids, minlength=3) / len(ds)
    assert np.all(np.abs(freq - 1 / 3) <= 0.02)


@pytest.mark.parametrize("variant", ["intercept", "slope", "both", "either"])
@pytest.mark.parametrize("depth", [2, 3, 4])
def test_noiseless_reconstruction_and_activity(variant, depth):
    ds = generate_chopsticks(ChopsticksConfig(variant, depth, 3000, seed=depth))
    X = reconstruct_from_factors(ds, variant, depth)
    assert np.array_equal(X.astype(np.float32), ds.X)
    assert np.array_equal(ds.active, ds.hierarchy.active_dims(ds.A))
    # every path is populated
    assert set(np.unique(ds.path_ids)) == set(range(len(ds.hierarchy.paths)))


def test_either_modes_are_fair():
    ds = generate_chopsticks(ChopsticksConfig("either", 2, 40_000, seed=3))
    mode = ds.A[:, ds.hierarchy.categorical_names.index("mode")]
    assert abs(mode.mean() - 0.5) < 0.015


def test_noise_is_additive_and_separate():
    clean = generate_chopsticks(ChopsticksConfig("both", 2, 500, 0.0, seed=2))
    noisy = generate_chopsticks(ChopsticksConfig("both", 2, 500, 0.05, seed=2))
    assert np.array_equal(clean.A, noisy.A)
    assert np.allclose(np.nanmax(np.abs(clean.V - noisy.V)), 0)
    resid = noisy.X - clean.X
    assert 0.045 < resid.std() < 0.055


def test_determinism():
    a = generate_chopsticks(ChopsticksConfig("either", 3, 200, seed=5))
    b = generate_chopsticks(ChopsticksConfig("either", 3, 200, seed=5))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.A, b.A)
    assert np.array_equal(a.V, b.V, equal_nan=True)


def test_prefix_stability():
    # sample i depends only on (seed, i) and the draw layout
    a = generate_chopsticks(ChopsticksConfig("both", 3, 100, seed=5))
    b = generate_chopsticks(ChopsticksConfig("both", 3, 300, seed=5))
    assert np.array_equal(a.X, b.X[:100])


@pytest.mark.parametrize("kw", [dict(variant="diagonal"), dict(depth=1), dict(depth=7), dict(noise_sigma=-1)])
def test_bad_configs(kw):
    with pytest.raises(ConfigError):
        ChopsticksConfig(**kw)


def test_dataset_roundtrip(tmp_path):
    ds = generate_chopsticks(ChopsticksConfig("either", 3, 50, seed=1))
    write_dataset(ds, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert np.array_equal(back.X, ds.X)
    assert np.array_equal(back.A, ds.A)
    assert np.array_equal(back.V, ds.V, equal_nan=True)
    assert back.hierarchy == ds.hierarchy
    raw = (tmp_path / "d" / "X.bin").read_bytes()
    assert np.frombuffer(raw[:8], "<u4").tolist() == [50, 64]
    assert len(raw) == 8 + 50 * 64 * 4


# -- spaceshapes -------------------------------------------------------------


def test_moon_phase_zero_is_full_disk():
    img = render_spaceshape("moon", 32, 32, phase=0.0)
    yy, xx = np.mgrid[0:64, 0:64]
    disk = (xx + 0.5 - 32) ** 2 + (yy + 0.5 - 32) ** 2 <= 64
    assert np.array_equal(img.astype(bool), disk)


def test_ranges_enforced():
    with pytest.raises(FactorRangeError):
        render_spaceshape("moon", 10, 32, phase=0.1)
    with pytest.raises(FactorRangeError):
        render_spaceshape("ship", 32, 32, angle=80)
    with pytest.raises(FactorRangeError):
        render_spaceshape("ship", 32, 32, angle=0, jetlen=20)


def test_jet_length_grows_pixels():
    base = render_spaceshape("ship", 32, 32, angle=0).sum()
    short = render_spaceshape("ship", 32, 32, angle=0, jetlen=2).sum()
    long = render_spaceshape("ship", 32, 32, angle=0, jetlen=10).sum()
    assert base < short < long


def _rotate_set(img, angle, cx, cy):
    """img rotated by angle (degrees) about (cx, cy), sampled at pixel centres."""
    yy, xx = np.mgrid[0:64, 0:64] + 0.5
    a = np.deg2rad(-angle)
    x, y = xx - cx, yy - cy
    xs = np.cos(a) * x - np.sin(a) * y + cx
    ys = np.sin(a) * x + np.cos(a) * y + cy
    r = np.clip(np.floor(ys).astype(int), 0, 63)
    c = np.clip(np.floor(xs).astype(int), 0, 63)
    return img[r, c]


def test_ship_rotation_matches_up_to_rasterisation():
    ref = render_spaceshape("ship", 32, 32, angle=0, jetlen=6)
    for a in (-45, -20, 30, 60):
        img = render_spaceshape("ship", 32, 32, angle=a, jetlen=6)
        rot = _rotate_set(ref, a, 32, 32)
        iou = (img & rot).sum() / (img | rot).sum()
        assert iou > 0.85


def test_generation_marginals():
    ds = generate_spaceshapes(SpaceshapesConfig(20_000, seed=0))
    shape = ds.A[:, 0]
    assert np.all(np.abs(np.bincount(shape, minlength=3) / len(ds) - 1 / 3) <= 0.015)
    ships = shape == 2
    assert abs(ds.A[ships, 1].mean() - 0.5) <= 0.02
    on = ds.X.sum(axis=1)
    assert on.min() >= 1 and on.max() < 4096
    assert set(np.unique(ds.X)) <= {0.0, 1.0}
    assert np.array_equal(ds.active, ds.hierarchy.active_dims(ds.A))


def test_generation_matches_renderer():
    ds = generate_spaceshapes(SpaceshapesConfig(30, seed=4))
    names = ds.hierarchy.continuous_dims
    shapes = ("moon", "star", "ship")
    for i in range(len(ds)):
        f = {n: ds.V[i, j] for j, n in enumerate(names) if not np.isnan(ds.V[i, j])}
        img = render_spaceshape(shapes[ds.A[i, 0]], **f)
        assert np.array_equal(img.ravel(), ds.X[i])


# -- per-factor monotonicity over 25-point sweeps -----------------------------


@pytest.mark.parametrize("shape,factor,fixed", MONOTONE_CASES)
def test_factor_monotone(shape, factor, fixed):
    for anchor in SWEEP_ANCHORS:
        base = {k: v for k, v in anchor.items() if k != factor}
        assert factor_is_monotone(shape, factor, {**base, **fixed}), (shape, factor, anchor)


def test_monotonicity_catches_a_bad_sweep():
    # a reversed range must fail the inclusion test
    assert not spaceshapes._nested([np.ones(3), np.zeros(3)], grow=True)
