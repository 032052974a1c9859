"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers; the lines are repeated in the terminal summary. The MIMOSA and
COFHAE runs are long (about an hour on one core in total).
"""
import numpy as np
import pytest

from hierdis.benchmarks import (
    ChopsticksConfig, SpaceshapesConfig, alternative_hierarchies, generate_chopsticks,
    generate_spaceshapes,
)
from hierdis.benchmarks.chopsticks import reconstruct_from_factors
from hierdis.benchmarks.spaceshapes import monotonicity_report
from hierdis.cofhae import CofhaeConfig, factor_targets, score_model, train_cofhae
from hierdis.hierarchy import flat_hierarchy, reexpress
from hierdis.metrics import h_error, purity, r4, r4c
from hierdis.mimosa import MimosaConfig, brute_force_neighbors, neighbor_graph, run_mimosa
from hierdis.nn import ACTIVATIONS, DenseNet, LossKind, gradient_check

VERDICTS = []

VARIANTS = ("intercept", "slope", "both", "either")
N_MIMOSA = 100_000
MIMOSA_RESTARTS = 3
N_COFHAE = 20_000
N_HELDOUT = 5_000
COFHAE_RESTARTS = 5


def verdict(tag, ok, detail):
    line = f"{tag} [{'PASS' if ok else 'FAIL'}] {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def initial_dim(h):
    return max(p.n_continuous for p in h.paths) + 1


def structure_scores(res, ds):
    return purity(res.path_ids, ds.path_ids), res.coverage, h_error(res.hierarchy, ds.hierarchy)


@pytest.fixture(scope="session")
def mimosa_runs():
    """Depth-2 MIMOSA runs at full size, keyed by (variant, restart); lazily filled."""
    cache = {}

    def get(variant, restart):
        if (variant, restart) not in cache:
            ds = generate_chopsticks(ChopsticksConfig(variant, 2, N_MIMOSA, seed=0))
            res = run_mimosa(ds.X, MimosaConfig(initial_dim=initial_dim(ds.hierarchy), seed=restart))
            cache[variant, restart] = (ds, res)
        return cache[variant, restart]

    return get


def heldout(variant, depth=2):
    return generate_chopsticks(ChopsticksConfig(variant, depth, N_HELDOUT, seed=99))


def cofhae_r4c(X, h, A, ev, ablation, restart, V=None):
    cfg = CofhaeConfig(ablation=ablation, seed=restart)
    model = train_cofhae(X, h, A, cfg, V=V)
    return score_model(model, ev.X, ev.V, ev.active, with_r4=False)["r4c"]


# -- structure discovery ---------------------------------------------------------


def test_c1_mimosa_depth2_all_variants(mimosa_runs):
    rows, ok = [], True
    for v in VARIANTS:
        scores = []
        for r in range(MIMOSA_RESTARTS):
            ds, res = mimosa_runs(v, r)
            scores.append(structure_scores(res, ds))
        scores = np.array(scores)
        p, c = scores[:, 0].mean(), scores[:, 1].mean()
        herr = scores[:, 2].astype(int).tolist()
        good = p >= 0.97 and c >= 0.85 and not any(herr)
        ok &= good
        rows.append(f"{v}: purity={p:.4f} coverage={c:.4f} h_error={herr}")
    verdict("C1", ok, "; ".join(rows))


def test_c2_mimosa_depth3():
    rows, ok = [], True
    for v in ("intercept", "slope"):
        ds = generate_chopsticks(ChopsticksConfig(v, 3, N_MIMOSA, seed=0))
        res = run_mimosa(ds.X, MimosaConfig(initial_dim=initial_dim(ds.hierarchy), seed=0))
        p, c, e = structure_scores(res, ds)
        ok &= p >= 0.90 and c >= 0.90 and e == 0
        rows.append(f"{v}: purity={p:.4f} coverage={c:.4f} h_error={e}")
    verdict("C2", ok, "; ".join(rows))


def test_c3_mimosa_spaceshapes_dense():
    ds = generate_spaceshapes(SpaceshapesConfig(20_000, seed=0))
    res = run_mimosa(ds.X, MimosaConfig.for_images(initial_dim=initial_dim(ds.hierarchy), seed=0))
    p, c, e = structure_scores(res, ds)
    dims = sorted(comp.d for comp in res.components)
    verdict("C3", e == 0 and p >= 0.95,
            f"purity={p:.4f} coverage={c:.4f} h_error={e} component dims={dims}")


# -- COFHAE ------------------------------------------------------------------------


def test_c4_cofhae_ablation_ladder():
    ds = generate_chopsticks(ChopsticksConfig("both", 2, N_COFHAE, seed=0))
    ev = heldout("both")
    V = factor_targets(ds.V, ds.hierarchy, ds.hierarchy)
    best = {}
    for ab in ("flat", "hier_h", "ha", "cofhae", "haz"):
        runs = [cofhae_r4c(ds.X, ds.hierarchy, ds.A, ev, ab, r, V=V) for r in range(COFHAE_RESTARTS)]
        best[ab] = max(runs)
    ok = (best["haz"] >= 0.95 and best["cofhae"] >= 0.85 and best["flat"] <= 0.75
          and best["flat"] < best["hier_h"] <= best["ha"] <= best["cofhae"])
    verdict("C4", ok, " ".join(f"{k}={v:.3f}" for k, v in best.items()))


def test_c5_mimosa_then_cofhae(mimosa_runs):
    rows, ok = [], True
    for v in VARIANTS:
        ds, res = mimosa_runs(v, 0)
        ev = heldout(v)
        # desk scale: COFHAE trains on the first rows of the MIMOSA run
        idx = np.arange(N_COFHAE)
        A = np.where(res.covered[idx, None], res.assignments[idx], -1)
        scores = []
        for r in range(COFHAE_RESTARTS):
            scores.append(cofhae_r4c(ds.X[idx], res.hierarchy, A, ev, "cofhae", r))
            if scores[-1] >= 0.85:
                break
        ok &= max(scores) >= 0.85
        rows.append(f"{v}: best r4c={max(scores):.3f} over {len(scores)} restarts")
    verdict("C5", ok, "; ".join(rows))


# -- metrics ------------------------------------------------------------------------


def test_c6_metric_identities():
    rng = np.random.default_rng(0)
    V = rng.uniform(-1, 1, (3000, 3))
    same = r4(V, V, seed=1).score
    warped = r4(V, np.c_[V[:, 2] ** 3, V[:, 0], V[:, 1] ** 3], seed=1).score
    Z = np.c_[V[:, 1], V[:, 0] + 0.3 * V[:, 2], V[:, 2] ** 3]
    flat = r4(V, Z, seed=7).score
    flat_c = r4c(V, np.ones_like(V, bool), Z, flat_hierarchy(["a", "b", "c"]),
                 np.zeros((3000, 0), int), seed=7).score
    shapes = generate_spaceshapes(SpaceshapesConfig(4000, seed=1))
    rewrites = {}
    for name in ("pushed", "merged"):
        h, mapping = alternative_hierarchies()[name]
        Zr, _ = reexpress(shapes.V, shapes.hierarchy, h, mapping, shapes.A)
        rewrites[name] = r4c(shapes.V, shapes.active, np.nan_to_num(Zr), h, shapes.A).score
    ok = (abs(same - 1) <= 0.02 and abs(warped - same) <= 0.02 and abs(flat - flat_c) < 1e-6
          and min(rewrites.values()) >= 0.95)
    verdict("C6", ok, f"r4(V,V)={same:.4f} warped+permuted={warped:.4f} |r4-r4c| flat={abs(flat - flat_c):.2e} "
            f"push_down={rewrites['pushed']:.4f} merge_up={rewrites['merged']:.4f}")


def test_c7_h_error():
    from test_metrics import drop_leaves
    from hierdis.benchmarks.chopsticks import ground_truth_hierarchy

    alts = [h for h, _ in alternative_hierarchies().values()]
    pair = max(h_error(a, b) for a in alts for b in alts)
    h = ground_truth_hierarchy(ChopsticksConfig("either", 3, 10))
    cut = h_error(drop_leaves(h, 2), h)
    verdict("C7", pair == 0 and cut == 2, f"max pairwise among alternatives={pair} two deleted leaves={cut}")


# -- nn ------------------------------------------------------------------------------


def test_c8_gradient_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(24, 5))
    worst = 0.0
    for act in ACTIVATIONS:
        for loss in (LossKind("gaussian", 0.1), LossKind("mse"), LossKind("bernoulli")):
            target = (X > 0).astype(float) if loss.kind == "bernoulli" else X
            err = gradient_check(DenseNet([5, 7, 3], act, seed=2), DenseNet([3, 7, 5], act, seed=3),
                                 X, loss, probes=100, target=target)
            worst = max(worst, err)
    verdict("C8", worst < 1e-4, f"max relative error {worst:.2e} over {len(ACTIVATIONS) * 3} net/loss pairs")


# -- generators ---------------------------------------------------------------------


def test_c9_generator_oracles():
    dev = 0.0
    for depth in (2, 3, 4):
        ds = generate_chopsticks(ChopsticksConfig("both", depth, 100_000, seed=depth))
        freq = np.bincount(ds.path_ids, minlength=depth) / len(ds)
        dev = max(dev, float(np.abs(freq - 1 / depth).max()))
    exact = all(
        np.array_equal(reconstruct_from_factors(ds, v, d).astype(np.float32), ds.X)
        for v in VARIANTS for d in (2, 3, 4)
        for ds in [generate_chopsticks(ChopsticksConfig(v, d, 2000, seed=d))])
    mono = monotonicity_report()
    bad = [k for k, passed in mono.items() if not passed]
    verdict("C9", dev <= 0.02 and exact and not bad,
            f"stop-level max deviation={dev:.4f} exact reconstruction={exact} "
            f"monotone sweeps {len(mono) - len(bad)}/{len(mono)}")


def test_c10_knn_oracle():
    Z = np.random.default_rng(3).normal(size=(500, 4))
    same = np.array_equal(neighbor_graph(Z, 40), brute_force_neighbors(Z, 40))
    g = np.stack(np.meshgrid(np.arange(10), np.arange(50)), -1).reshape(-1, 2).astype(float)
    ties = np.array_equal(neighbor_graph(g, 12), brute_force_neighbors(g, 12))
    verdict("C10", same and ties, f"random n=500 exact={same} lattice with ties exact={ties}")
