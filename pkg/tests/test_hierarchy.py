import itertools

import numpy as np
import pytest

from hierdis.benchmarks import ChopsticksConfig
from hierdis.benchmarks.chopsticks import ground_truth_hierarchy as chop_h
from hierdis.benchmarks.spaceshapes import ground_truth_hierarchy as space_h
from hierdis.hierarchy import (
    EMPTY, UNDEFINED, Categorical, DimensionGroup, DimensionHierarchy, HierarchyError,
    HierarchyParseError, InvalidAssignmentError, Option, flat_hierarchy, merge_up,
    push_down, reexpress,
)


def chop(variant, depth):
    return chop_h(ChopsticksConfig(variant=variant, depth=depth, n_samples=10))


def brute_paths(g):
    """Independent path count straight from the tree."""
    if g.categorical is None:
        return 1
    return sum(brute_paths(o.child) for o in g.categorical.options)


def f(k):
    return 1 if k == 1 else 1 + 2 * f(k - 1)


@pytest.mark.parametrize("variant,depth", list(itertools.product(["intercept", "slope", "both", "either"], range(2, 7))))
def test_path_counts(variant, depth):
    h = chop(variant, depth)
    expected = 2 * f(depth) if variant == "either" else depth
    assert len(h.enumerate_paths()) == expected == brute_paths(h.root)


def test_known_path_counts():
    assert len(chop("either", 3).paths) == 14
    assert len(chop("either", 2).paths) == 6
    assert len(flat_hierarchy(["a", "b"]).paths) == 1
    assert len(space_h().paths) == 4


def test_path_dimensionalities():
    assert sorted(p.n_continuous for p in chop("both", 2).paths) == [2, 4]
    assert sorted(p.n_continuous for p in chop("slope", 3).paths) == [1, 2, 3]
    assert sorted(p.n_continuous for p in space_h().paths) == [3, 3, 3, 4]


def test_min_downstream_dim():
    h = space_h()
    assert h.min_downstream_dim(()) == 3
    ship = (("shape", 2),)
    assert h.min_downstream_dim(ship) == 3
    assert h.min_downstream_dim(ship + (("jet", 1),)) == 4
    assert flat_hierarchy(["a", "b", "c"]).min_downstream_dim() == 3


def test_hard_mask_moon():
    h = space_h()
    a = np.array([0, UNDEFINED])
    m = h.hard_mask(a)
    on = {n for n, v in zip(h.layout.names, m) if v}
    assert on == {"x", "y", "phase", "shape:moon"}


def test_hard_mask_flat_and_chop():
    h = flat_hierarchy(["a", "b"])
    assert h.hard_mask(np.zeros(0, dtype=int)).tolist() == [1, 1]
    hb = chop("both", 2)
    m = hb.hard_mask(np.array([1]))
    assert m[hb.layout.continuous].sum() == 4


def test_hard_mask_properties():
    h = chop("either", 3)
    for p in h.paths:
        a = h.assignment_for_path(p)
        m = h.hard_mask(a)
        # one option per categorical on the path
        for name, blk in h.layout.blocks.items():
            if name in dict(p.choices):
                assert m[blk].sum() == 1
            else:
                assert m[blk].sum() == 0
        assert m[h.layout.continuous].sum() == p.n_continuous
        assert np.array_equal(m * m, m)


def test_invalid_assignment():
    h = space_h()
    with pytest.raises(InvalidAssignmentError):
        h.hard_mask(np.array([5, UNDEFINED]))
    with pytest.raises(InvalidAssignmentError):
        h.hard_mask(np.array([0, 1]))  # jet defined off the ship path


def test_layout_preorder():
    h = space_h()
    assert h.layout.names == [
        "x", "y", "shape:moon", "shape:star", "shape:ship", "phase", "shine", "angle",
        "jet:none", "jet:jet", "jetlen"]
    assert len(h.layout) == len(h.continuous_dims) + sum(len(c.options) for _, c in h.categoricals)


def test_serialize_roundtrip(tmp_path):
    for h in (space_h(), chop("either", 3), flat_hierarchy(["q"])):
        assert DimensionHierarchy.loads(h.dumps()) == h
    p = tmp_path / "h.json"
    space_h().save(p)
    assert len(DimensionHierarchy.load(p).paths) == 4


def test_parse_errors():
    doc = space_h().to_dict()
    doc["root"]["categorical"]["options"][1]["child"]["extra"] = 1
    with pytest.raises(HierarchyParseError) as e:
        DimensionHierarchy.from_dict(doc)
    assert "options[1].child" in str(e.value)
    with pytest.raises(HierarchyParseError):
        DimensionHierarchy.loads("{not json")
    with pytest.raises(HierarchyParseError):
        DimensionHierarchy.from_dict({"version": "other", "root": {"continuous": []}})


def test_invariants_enforced():
    with pytest.raises(HierarchyError):
        DimensionHierarchy(DimensionGroup(("a",), Categorical("c", (Option("o", DimensionGroup(("a",))),))))
    with pytest.raises((HierarchyError, ValueError)):
        Categorical("c", ())


def signatures(h):
    return sorted(h.path_signature(p) for p in h.paths)


def test_merge_up_push_down_preserve_signatures():
    h = space_h()
    merged, mapping = merge_up(h, ["phase", "shine", "angle"], name="pose")
    assert "pose" in merged.root.continuous
    assert signatures(merged) == signatures(h)
    assert mapping["pose"] == ["phase", "shine", "angle"]
    pushed, _ = push_down(h, "x")
    assert "x" not in pushed.root.continuous
    assert {"x@moon", "x@star", "x@ship"} <= set(pushed.continuous_dims)
    assert signatures(pushed) == signatures(h)
    # round trip
    back, _ = push_down(merged, "pose")
    assert signatures(back) == signatures(h)


def test_transforms_reject_bad_requests():
    h = space_h()
    with pytest.raises(HierarchyError):
        merge_up(h, ["phase", "shine"])
    with pytest.raises(HierarchyError):
        push_down(h, "jetlen")
    with pytest.raises(HierarchyError):
        merge_up(h, ["x"])


def test_reexpress_values():
    h = space_h()
    A = np.array([[0, -1], [1, -1], [2, 0], [2, 1]])
    V = np.full((4, len(h.continuous_dims)), np.nan)
    cols = {d: i for i, d in enumerate(h.continuous_dims)}
    V[:, cols["x"]] = [1, 2, 3, 4]
    V[:, cols["y"]] = 5
    V[0, cols["phase"]] = 0.1
    V[1, cols["shine"]] = 0.2
    V[2:, cols["angle"]] = [10, 20]
    V[3, cols["jetlen"]] = 3
    merged, mapping = merge_up(h, ["phase", "shine", "angle"], name="pose")
    W, act = reexpress(V, h, merged, mapping, A)
    assert W[:, merged.continuous_dims.index("pose")].tolist() == [0.1, 0.2, 10, 20]
    pushed, mp = push_down(h, "x")
    W, act = reexpress(V, h, pushed, mp, A)
    j = pushed.continuous_dims.index("x@star")
    assert act[:, j].tolist() == [False, True, False, False]
    assert W[1, j] == 2


def test_path_ids_and_group_activity():
    h = space_h()
    A = np.array([[0, -1], [2, 1], [-1, -1]])
    ids = h.path_ids(A)
    assert ids[-1] == -1 and ids[0] != ids[1]
    on = h.group_activity(A)
    assert on[()].tolist() == [True, True, False]
    assert on[(("shape", 2),)].tolist() == [False, True, False]
    assert flat_hierarchy(["a"]).path_ids(np.zeros((3, 0))).tolist() == [0, 0, 0]
