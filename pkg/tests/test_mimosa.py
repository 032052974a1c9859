import numpy as np
import pytest

from hierdis.mimosa import (
    ManifoldComponent, MimosaConfig, MimosaConfigError, StructureNotFoundError, UnionFind,
    brute_force_neighbors, build_components, choose_dim, construct_hierarchy, detect_edges,
    discover, local_svd, local_svd_block, merge_components, neighbor_graph, reduce,
    tangent_plane_cos,
)
from hierdis.mimosa.components import neighbor_lengthscale

# -- neighbours ----------------------------------------------------------------


def test_knn_matches_exhaustive_oracle():
    Z = np.random.default_rng(0).normal(size=(500, 3))
    nb, dist = neighbor_graph(Z, 10, return_distance=True)
    assert np.array_equal(nb, brute_force_neighbors(Z, 10))
    D = np.linalg.norm(Z[:, None] - Z[None], axis=2)
    assert np.allclose(dist, np.take_along_axis(D, nb, axis=1))


def test_knn_ties_by_index():
    # a lattice has many exact distance ties
    g = np.stack(np.meshgrid(np.arange(8), np.arange(8)), -1).reshape(-1, 2).astype(float)
    assert np.array_equal(neighbor_graph(g, 8), brute_force_neighbors(g, 8))
    dup = np.zeros((5, 2))
    assert neighbor_graph(dup, 2)[0].tolist() == [1, 2]


def test_collinear():
    Z = np.array([[0.0], [1.0], [3.0]])
    assert neighbor_graph(Z, 1)[:, 0].tolist() == [1, 0, 1]


def test_knn_k_too_large():
    with pytest.raises(ValueError):
        neighbor_graph(np.zeros((3, 2)), 3)


# -- local SVD -------------------------------------------------------------------


def plane_points(rng, n, D=4, d=2):
    B = np.linalg.qr(rng.normal(size=(D, d)))[0].T
    return rng.uniform(-1, 1, size=(n, d)) @ B, B


def test_exact_plane_is_2d():
    rng = np.random.default_rng(0)
    P, B = plane_points(rng, 40)
    vt, d, eig = local_svd_block(P[None], ransac_frac=1.0)
    assert d[0] == 2
    assert eig[0, :2].sum() / eig[0].sum() == pytest.approx(1.0)
    assert tangent_plane_cos(vt[0, :2], B) == pytest.approx(1.0)


def test_ransac_refit_rejects_outliers():
    rng = np.random.default_rng(1)
    P, B = plane_points(rng, 40)
    P[:4] = rng.normal(size=(4, 4)) * 3
    _, d_refit, _ = local_svd_block(P[None], ransac_frac=2 / 3)
    _, d_plain, _ = local_svd_block(P[None], ransac_frac=1.0)
    assert d_refit[0] == 2
    assert d_plain[0] >= 3


def test_choose_dim_rules():
    assert choose_dim(np.array([10.0, 9.0, 0.01, 0.0]), 0.95, 4)[0] == 2
    # variance is there but no eigengap: keep everything
    assert choose_dim(np.array([4.0, 3.0, 2.0, 1.0]), 0.95, 4)[0] == 4
    assert choose_dim(np.zeros(3), 0.95, 4)[0] == 3


def test_local_bases_orthonormal():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(300, 3))
    lb = local_svd(Z, neighbor_graph(Z, 12))
    G = lb.components @ np.swapaxes(lb.components, 1, 2)
    assert np.allclose(G, np.eye(3), atol=1e-6)
    assert np.all((lb.dims >= 1) & (lb.dims <= 3))


def test_tangent_cos():
    e = np.eye(3)
    assert tangent_plane_cos(e[:2], e[:2]) == pytest.approx(1)
    assert tangent_plane_cos(e[:2], e[[1, 0]]) == pytest.approx(1)
    assert tangent_plane_cos(e[:1], e[1:2]) == pytest.approx(0)
    assert tangent_plane_cos(e[:1], e[:2]) == 0
    r = np.array([[np.cos(0.3), np.sin(0.3), 0]])
    assert tangent_plane_cos(e[:1], r) == pytest.approx(np.cos(0.3))


# -- components ---------------------------------------------------------------


def grid_plane(m, offset=(0, 0, 0), step=0.05):
    u, v = np.meshgrid(np.arange(m) * step, np.arange(m) * step)
    P = np.stack([u.ravel(), v.ravel(), np.zeros(m * m)], 1)
    return P + np.asarray(offset, float)


def components_for(Z, k=20, thresh=0.99, contagion=5):
    nb = neighbor_graph(Z, k)
    lb = local_svd(Z, nb)
    return build_components(nb, lb, thresh, contagion), lb


def test_two_separate_planes():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 1, (800, 2))
    Z = np.concatenate([np.c_[a, np.zeros(800)], np.c_[np.zeros(800), a + 5]])
    comps, _ = components_for(Z)
    big = sorted(comps, key=lambda c: -c.size)[:2]
    for c in big:
        assert c.d == 2 and c.size >= 760
        assert len(set(c.members // 800)) == 1  # never spans both planes


def test_union_find():
    uf = UnionFind(5)
    uf.union(0, 3)
    uf.union(3, 4)
    assert uf.groups() == [[0, 3, 4], [1], [2]]


def test_grid_edges_in_boundary_band():
    Z = grid_plane(15)
    comp = ManifoldComponent(np.arange(len(Z)), 2)
    nb = neighbor_graph(Z, 20)
    lb = local_svd(Z, nb)
    i, j = np.divmod(np.arange(len(Z)), 15)
    band = set(np.nonzero((np.minimum(i, j) <= 1) | (np.maximum(i, j) >= 13))[0].tolist())
    for method in ("direction", "convex-hull"):
        edges = set(detect_edges(Z, comp, lb, 20, method=method).tolist())
        assert edges and edges <= band
        assert {0, 14, 210, 224} <= edges


def test_disk_interior_not_edge():
    rng = np.random.default_rng(0)
    r = np.sqrt(rng.uniform(0, 1, 3000))
    a = rng.uniform(0, 2 * np.pi, 3000)
    Z = np.c_[r * np.cos(a), r * np.sin(a), np.zeros(3000)]
    Z[0] = 0
    nb = neighbor_graph(Z, 40)
    lb = local_svd(Z, nb)
    edges = detect_edges(Z, ManifoldComponent(np.arange(3000), 2), lb, 40)
    assert 0 not in edges
    assert np.linalg.norm(Z[edges], axis=1).min() > 0.7


def test_single_point_is_edge():
    Z = np.zeros((3, 2))
    lb = local_svd(Z, neighbor_graph(Z, 2))
    assert detect_edges(Z, ManifoldComponent(np.array([1]), 1), lb, 5).tolist() == [1]


def test_split_plane_is_merged():
    Z = grid_plane(40)
    nb = neighbor_graph(Z, 20)
    lb = local_svd(Z, nb)
    left = np.nonzero(Z[:, 0] < 0.975)[0]
    right = np.nonzero(Z[:, 0] >= 0.975)[0]
    comps = [ManifoldComponent(left, 2), ManifoldComponent(right, 2)]
    cfg = MimosaConfig(num_nearest_neighbors=20)
    assert cfg.min_common_edge_frac(2) == pytest.approx(0.1875)
    merged = merge_components(Z, comps, lb, cfg, len(Z))
    assert len(merged) == 1 and merged[0].size == len(Z)


def test_far_planes_not_merged_with_distance_gate():
    Z = np.concatenate([grid_plane(20), grid_plane(20, (3, 0, 0))])
    nb = neighbor_graph(Z, 20)
    lb = local_svd(Z, nb)
    comps = [ManifoldComponent(np.arange(400), 2), ManifoldComponent(np.arange(400, 800), 2)]
    cfg = MimosaConfig(num_nearest_neighbors=20, max_edge_match_dist=0.5)
    assert len(merge_components(Z, comps, lb, cfg, 800)) == 2


def test_full_dimensional_blobs_never_merge():
    rng = np.random.default_rng(0)
    Z = np.concatenate([rng.uniform(0, 1, (300, 2)), rng.uniform(0, 1, (300, 2)) + [1.05, 0]])
    lb = local_svd(Z, neighbor_graph(Z, 20))
    comps = [ManifoldComponent(np.arange(300), 2), ManifoldComponent(np.arange(300, 600), 2)]
    assert len(merge_components(Z, comps, lb, MimosaConfig(num_nearest_neighbors=20), 600)) == 2


def test_line_enclosed_in_plane():
    plane = grid_plane(30)
    t = np.linspace(0.1, 1.3, 200)
    line = np.c_[t, np.full(200, 0.7), np.zeros(200)]
    Z = np.concatenate([plane, line])
    comps = [ManifoldComponent(np.arange(900), 2, neighbor_lengthscale=neighbor_lengthscale(plane, np.arange(900))),
             ManifoldComponent(np.arange(900, 1100), 1, neighbor_lengthscale=0.006)]
    h, A, covered, parent, ratios = construct_hierarchy(Z, comps, len(Z))
    assert parent == [1, -1]  # the line is the top-level group, the plane adds a dim
    assert sorted(p.n_continuous for p in h.paths) == [1, 2]
    assert covered.all()
    ids = h.path_ids(A)
    assert len(set(ids[:900])) == 1 and len(set(ids[900:])) == 1 and ids[0] != ids[-1]


def test_far_line_is_its_own_branch():
    plane = grid_plane(30)
    line = np.c_[np.linspace(0, 1, 200), np.full(200, 50.0), np.zeros(200)]
    Z = np.concatenate([plane, line])
    comps = [ManifoldComponent(np.arange(900), 2, neighbor_lengthscale=0.05),
             ManifoldComponent(np.arange(900, 1100), 1, neighbor_lengthscale=0.005)]
    h, A, _, parent, _ = construct_hierarchy(Z, comps, len(Z))
    assert parent == [-1, -1]
    assert "component" in h.categorical_names
    assert sorted(p.n_continuous for p in h.paths) == [1, 2]


def test_nested_chain_prunes_transitive_edge():
    from hierdis.mimosa import enclosure_tree
    comps = [ManifoldComponent(np.arange(3), d) for d in (1, 2, 3)]
    ratios = {(0, 1): 1.0, (0, 2): 0.5, (1, 2): 1.0}
    assert enclosure_tree(comps, ratios, 10) == [-1, 0, 1]


# -- pipeline ----------------------------------------------------------------------


def test_discover_line_plus_plane():
    rng = np.random.default_rng(0)
    plane = np.c_[rng.uniform(-1, 1, (6000, 2)), np.zeros(6000)]
    # the line lives along z, sticking out of the plane through its centre
    line = np.c_[np.zeros(3000), np.zeros(3000), rng.uniform(0.05, 1, 3000)]
    Z = np.concatenate([plane, line])
    h, A, covered, comps, parent = discover(Z, MimosaConfig(initial_dim=3))
    assert sorted(c.d for c in comps) == [1, 2]
    assert covered.mean() > 0.9
    assert len(h.paths) == 2


def test_no_structure_raises():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 1, (400, 2))
    Z = np.concatenate([np.c_[a, np.zeros(400)], np.c_[np.zeros(400), a + 5]])
    with pytest.raises(StructureNotFoundError):
        discover(Z, MimosaConfig(initial_dim=3, min_size_merged=0.6))


def test_reduce_shapes_and_smooth():
    X = np.random.default_rng(0).normal(size=(300, 10)).astype(np.float32)
    Z, enc, dec, hist = reduce(X, 3, MimosaConfig(initial_dim=3, ae_epochs=2, ae_hidden=(16,)))
    assert Z.shape == (300, 3) and enc.smooth and dec.smooth and len(hist) == 2


def test_config_invariants(tmp_path):
    with pytest.raises(MimosaConfigError):
        MimosaConfig(initial_dim=50, num_nearest_neighbors=40)
    with pytest.raises(MimosaConfigError):
        MimosaConfig(ransac_frac=0)
    with pytest.raises(MimosaConfigError):
        MimosaConfig(contagion_num=40)
    img = MimosaConfig.for_images()
    assert img.cos_simil_thresh == 0.95 and img.contagion_num == 3
    cfg = MimosaConfig(initial_dim=4)
    assert MimosaConfig.from_dict(cfg.to_dict()) == cfg
