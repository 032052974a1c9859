"""Dimension hierarchies: groups of continuous dims joined by categoricals.

A hierarchy is a tree. Each :class:`DimensionGroup` owns some continuous
dimensions and at most one :class:`Categorical`, whose options each lead to a
child group (possibly the empty group). An instance follows one root-to-leaf
path and only the dimensions along that path are active for it.

Groups are addressed by *node keys*: the tuple of ``(categorical, option
index)`` choices taken from the root, so the root is ``()``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

HIERARCHY_VERSION = "hierdis-hierarchy/1"
UNDEFINED = -1

NodeKey = tuple  # tuple[tuple[str, int], ...]


class HierarchyError(ValueError):
    pass


class InvalidAssignmentError(HierarchyError):
    pass


class HierarchyParseError(HierarchyError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


@dataclass(frozen=True)
class Option:
    label: str
    child: "DimensionGroup"


@dataclass(frozen=True)
class Categorical:
    name: str
    options: tuple[Option, ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not self.options:
            raise HierarchyError(f"categorical {self.name!r} has no options")


@dataclass(frozen=True)
class DimensionGroup:
    continuous: tuple[str, ...] = ()
    categorical: Categorical | None = None

    def __post_init__(self):
        object.__setattr__(self, "continuous", tuple(self.continuous))

    @property
    def is_empty(self) -> bool:
        return not self.continuous and self.categorical is None


EMPTY = DimensionGroup()


def group(*continuous: str, categorical: Categorical | None = None) -> DimensionGroup:
    return DimensionGroup(tuple(continuous), categorical)


def categorical(name: str, **options: DimensionGroup) -> Categorical:
    """Shorthand: ``categorical("shape", moon=group("phase"), ...)``."""
    return Categorical(name, tuple(Option(k, v) for k, v in options.items()))


@dataclass(frozen=True)
class Path:
    """A root-to-leaf path.

    ``choices`` holds the ``(categorical, option index)`` pairs taken and
    ``keys`` the node keys of every visited group, root first.
    """

    choices: tuple[tuple[str, int], ...]
    keys: tuple[NodeKey, ...]
    groups: tuple[DimensionGroup, ...] = field(compare=False, repr=False)

    @property
    def n_continuous(self) -> int:
        return sum(len(g.continuous) for g in self.groups)

    def label(self, hierarchy: "DimensionHierarchy") -> str:
        if not self.choices:
            return "<root>"
        parts = []
        for key, (name, idx) in zip(self.keys, self.choices):
            cat = hierarchy.group_at(key).categorical
            parts.append(f"{name}={cat.options[idx].label}")
        return "/".join(parts)


@dataclass(frozen=True)
class Slot:
    """One entry of the flat layout."""

    index: int
    kind: str  # "continuous" | "option"
    name: str
    node: NodeKey
    categorical: str | None = None
    option: int | None = None
    # layout indices of the option slots that must be chosen for this slot
    # to be active, outermost first
    ancestors: tuple[int, ...] = ()


class FlatLayout:
    """Slots for every continuous dim and categorical option.

    Order is depth-first pre-order: within a group its continuous dims come
    first, then the categorical's option block, then each option's subtree.
    """

    def __init__(self, slots: Sequence[Slot]):
        self.slots = tuple(slots)
        self.continuous = np.array([s.index for s in self.slots if s.kind == "continuous"], dtype=int)
        self.options = np.array([s.index for s in self.slots if s.kind == "option"], dtype=int)
        self.blocks: dict[str, np.ndarray] = {}
        for s in self.slots:
            if s.kind == "option":
                self.blocks.setdefault(s.categorical, [])
                self.blocks[s.categorical].append(s.index)
        self.blocks = {k: np.array(v, dtype=int) for k, v in self.blocks.items()}

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.slots]

    @property
    def continuous_names(self) -> list[str]:
        return [self.slots[i].name for i in self.continuous]

    def index(self, name: str) -> int:
        for s in self.slots:
            if s.name == name:
                return s.index
        raise KeyError(name)


def _walk(g: DimensionGroup, key: NodeKey = ()) -> Iterator[tuple[NodeKey, DimensionGroup]]:
    yield key, g
    if g.categorical is not None:
        for i, opt in enumerate(g.categorical.options):
            yield from _walk(opt.child, key + ((g.categorical.name, i),))


class DimensionHierarchy:
    """Immutable tree of dimension groups."""

    def __init__(self, root: DimensionGroup):
        self.root = root
        self._validate()

    def __eq__(self, other):
        return isinstance(other, DimensionHierarchy) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def __repr__(self):
        return f"DimensionHierarchy({self.to_dict()['root']!r})"

    def _validate(self):
        seen: set[str] = set()
        for key, g in _walk(self.root):
            names = list(g.continuous)
            if g.categorical is not None:
                names.append(g.categorical.name)
                labels = [o.label for o in g.categorical.options]
                if len(set(labels)) != len(labels):
                    raise HierarchyError(f"duplicate option labels in {g.categorical.name!r}")
            for n in names:
                if not isinstance(n, str) or not n:
                    raise HierarchyError(f"invalid dimension name {n!r}")
                if n in seen:
                    raise HierarchyError(f"duplicate dimension name {n!r}")
                seen.add(n)

    # -- structure ---------------------------------------------------------

    def groups(self) -> list[tuple[NodeKey, DimensionGroup]]:
        return list(_walk(self.root))

    def group_at(self, key: NodeKey) -> DimensionGroup:
        g = self.root
        for name, idx in key:
            if g.categorical is None or g.categorical.name != name:
                raise KeyError(key)
            g = g.categorical.options[idx].child
        return g

    @cached_property
    def categoricals(self) -> list[tuple[NodeKey, Categorical]]:
        """Categoricals in pre-order with the key of their owning group."""
        return [(k, g.categorical) for k, g in _walk(self.root) if g.categorical is not None]

    @cached_property
    def categorical_names(self) -> list[str]:
        return [c.name for _, c in self.categoricals]

    @cached_property
    def continuous_dims(self) -> list[str]:
        return [n for _, g in _walk(self.root) for n in g.continuous]

    @cached_property
    def dim_nodes(self) -> dict[str, NodeKey]:
        out = {}
        for k, g in _walk(self.root):
            for n in g.continuous:
                out[n] = k
            if g.categorical is not None:
                out[g.categorical.name] = k
        return out

    @cached_property
    def paths(self) -> list[Path]:
        out: list[Path] = []

        def rec(g, key, choices, keys, groups):
            keys, groups = keys + (key,), groups + (g,)
            if g.categorical is None:
                out.append(Path(choices, keys, groups))
                return
            for i, opt in enumerate(g.categorical.options):
                c = (g.categorical.name, i)
                rec(opt.child, key + (c,), choices + (c,), keys, groups)

        rec(self.root, (), (), (), ())
        return out

    def enumerate_paths(self) -> list[Path]:
        return list(self.paths)

    def dims_above(self, key: NodeKey) -> int:
        """Continuous dims strictly above the group at ``key``."""
        total, g = 0, self.root
        for name, idx in key:
            total += len(g.continuous)
            g = g.categorical.options[idx].child
        return total

    def _min_below(self, g: DimensionGroup) -> int:
        own = len(g.continuous)
        if g.categorical is None:
            return own
        return own + min(self._min_below(o.child) for o in g.categorical.options)

    def min_downstream_dim(self, key: NodeKey = ()) -> int:
        """Fewest active continuous dims on any complete path through ``key``."""
        return self.dims_above(key) + self._min_below(self.group_at(key))

    def path_signature(self, path: Path) -> tuple[int, ...]:
        return tuple(self.min_downstream_dim(k) for k in path.keys)

    @cached_property
    def layout(self) -> FlatLayout:
        slots: list[Slot] = []

        def rec(g, key, anc):
            for n in g.continuous:
                slots.append(Slot(len(slots), "continuous", n, key, ancestors=anc))
            if g.categorical is None:
                return
            cat = g.categorical
            first = len(slots)
            for i, opt in enumerate(cat.options):
                slots.append(Slot(len(slots), "option", f"{cat.name}:{opt.label}", key, cat.name, i, anc))
            for i, opt in enumerate(cat.options):
                rec(opt.child, key + ((cat.name, i),), anc + (first + i,))

        rec(self.root, (), ())
        return FlatLayout(slots)

    # -- assignments -------------------------------------------------------

    def assignment_for_path(self, path: Path) -> np.ndarray:
        a = np.full(len(self.categoricals), UNDEFINED, dtype=np.int64)
        pos = {n: i for i, n in enumerate(self.categorical_names)}
        for name, idx in path.choices:
            a[pos[name]] = idx
        return a

    @cached_property
    def _path_lookup(self) -> dict[tuple, int]:
        return {tuple(self.assignment_for_path(p)): i for i, p in enumerate(self.paths)}

    def path_index(self, assignment) -> int:
        """Path id for a single assignment vector; raises if inconsistent."""
        a = tuple(int(v) for v in np.asarray(assignment).ravel())
        if len(a) != len(self.categoricals):
            raise InvalidAssignmentError(
                f"assignment has {len(a)} entries, hierarchy has {len(self.categoricals)} categoricals")
        try:
            return self._path_lookup[a]
        except KeyError:
            raise InvalidAssignmentError(f"assignment {a} does not describe a path") from None

    def path_ids(self, assignments: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`path_index`; rows that are all ``UNDEFINED`` on a
        hierarchy with categoricals map to -1 (discarded)."""
        A = np.asarray(assignments, dtype=np.int64)
        A = A.reshape(len(A), -1) if A.ndim != 2 else A
        out = np.full(len(A), -1, dtype=np.int64)
        if len(A) == 0:
            return out
        if A.shape[1] == 0:
            return np.zeros(len(A), dtype=np.int64)
        rows, inverse = np.unique(A, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        for r, row in enumerate(rows):
            if len(row) and np.all(row == UNDEFINED):
                continue
            out[inverse == r] = self.path_index(row)
        return out

    def hard_mask(self, assignment) -> np.ndarray:
        """0/1 activation over layout slots for one assignment."""
        path = self.paths[self.path_index(assignment)]
        chosen = set(path.choices)
        on_keys = set(path.keys)
        m = np.zeros(len(self.layout), dtype=np.float64)
        for s in self.layout.slots:
            if s.node not in on_keys:
                continue
            if s.kind == "continuous" or (s.categorical, s.option) in chosen:
                m[s.index] = 1.0
        return m

    def hard_masks(self, assignments: np.ndarray) -> np.ndarray:
        ids = self.path_ids(assignments)
        table = np.stack([self.hard_mask(self.assignment_for_path(p)) for p in self.paths])
        out = np.zeros((len(ids), len(self.layout)))
        ok = ids >= 0
        out[ok] = table[ids[ok]]
        return out

    def active_dims(self, assignments: np.ndarray) -> np.ndarray:
        """Boolean (n, n_continuous) activity of continuous dims, in
        :attr:`continuous_dims` order."""
        return self.hard_masks(assignments)[:, self.layout.continuous] > 0.5

    def group_activity(self, assignments: np.ndarray) -> dict[NodeKey, np.ndarray]:
        ids = self.path_ids(assignments)
        out = {}
        for key, _ in _walk(self.root):
            hit = np.array([key in p.keys for p in self.paths])
            out[key] = (ids >= 0) & hit[np.maximum(ids, 0)]
        return out

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        def enc(g: DimensionGroup) -> dict:
            d: dict = {"continuous": list(g.continuous)}
            if g.categorical is not None:
                d["categorical"] = {
                    "name": g.categorical.name,
                    "options": [{"label": o.label, "child": enc(o.child)} for o in g.categorical.options],
                }
            return d

        return {"version": HIERARCHY_VERSION, "root": enc(self.root)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.dumps())

    @classmethod
    def from_dict(cls, doc) -> "DimensionHierarchy":
        _expect_keys(doc, "$", {"version", "root"}, {"version", "root"})
        if doc["version"] != HIERARCHY_VERSION:
            raise HierarchyParseError("$.version", f"unsupported version {doc['version']!r}")
        try:
            return cls(_parse_group(doc["root"], "$.root"))
        except HierarchyParseError:
            raise
        except HierarchyError as e:
            raise HierarchyParseError("$", str(e)) from None

    @classmethod
    def loads(cls, text: str) -> "DimensionHierarchy":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise HierarchyParseError(f"line {e.lineno} col {e.colno}", e.msg) from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "DimensionHierarchy":
        with open(path) as f:
            return cls.loads(f.read())


def _expect_keys(doc, loc, required, allowed):
    if not isinstance(doc, dict):
        raise HierarchyParseError(loc, "expected an object")
    for k in doc:
        if k not in allowed:
            raise HierarchyParseError(loc, f"unknown field {k!r}")
    for k in required:
        if k not in doc:
            raise HierarchyParseError(loc, f"missing field {k!r}")


def _parse_group(doc, loc) -> DimensionGroup:
    _expect_keys(doc, loc, {"continuous"}, {"continuous", "categorical"})
    cont = doc["continuous"]
    if not isinstance(cont, list) or not all(isinstance(c, str) for c in cont):
        raise HierarchyParseError(f"{loc}.continuous", "expected a list of names")
    cat = doc.get("categorical")
    if cat is None:
        return DimensionGroup(tuple(cont))
    cloc = f"{loc}.categorical"
    _expect_keys(cat, cloc, {"name", "options"}, {"name", "options"})
    if not isinstance(cat["name"], str):
        raise HierarchyParseError(f"{cloc}.name", "expected a string")
    opts = cat["options"]
    if not isinstance(opts, list) or not opts:
        raise HierarchyParseError(f"{cloc}.options", "expected a non-empty list")
    parsed = []
    for i, o in enumerate(opts):
        oloc = f"{cloc}.options[{i}]"
        _expect_keys(o, oloc, {"label", "child"}, {"label", "child"})
        if not isinstance(o["label"], str):
            raise HierarchyParseError(f"{oloc}.label", "expected a string")
        parsed.append(Option(o["label"], _parse_group(o["child"], f"{oloc}.child")))
    return DimensionGroup(tuple(cont), Categorical(cat["name"], tuple(parsed)))


# -- dimensionality-preserving transforms ---------------------------------


def _replace(g: DimensionGroup, key: NodeKey, fn) -> DimensionGroup:
    if not key:
        return fn(g)
    (name, idx), rest = key[0], key[1:]
    cat = g.categorical
    opts = list(cat.options)
    opts[idx] = Option(opts[idx].label, _replace(opts[idx].child, rest, fn))
    return DimensionGroup(g.continuous, Categorical(cat.name, tuple(opts)))


def merge_up(h: DimensionHierarchy, dims: Sequence[str], name: str | None = None):
    """Replace one dim per option of a categorical by a single dim in the
    categorical's owning group.

    Returns ``(new_hierarchy, mapping)`` where ``mapping`` sends each new
    dimension name to the old dims it stands for.
    """
    dims = list(dims)
    nodes = h.dim_nodes
    for d in dims:
        if d not in nodes or d not in h.continuous_dims:
            raise HierarchyError(f"{d!r} is not a continuous dimension")
    keys = [nodes[d] for d in dims]
    if any(len(k) == 0 for k in keys):
        raise HierarchyError("root dimensions cannot be merged up")
    parents = {k[:-1] for k in keys}
    cats = {k[-1][0] for k in keys}
    if len(parents) != 1 or len(cats) != 1:
        raise HierarchyError("dims must sit under options of one categorical")
    parent = parents.pop()
    cat = h.group_at(parent).categorical
    chosen = sorted(k[-1][1] for k in keys)
    if chosen != list(range(len(cat.options))):
        raise HierarchyError(f"need exactly one dim under each option of {cat.name!r}")
    name = name or "+".join(dims)
    if name in nodes and name not in dims:
        raise HierarchyError(f"name {name!r} already used")

    root = h.root
    for d, k in zip(dims, keys):
        root = _replace(root, k, lambda g, d=d: DimensionGroup(tuple(c for c in g.continuous if c != d), g.categorical))
    root = _replace(root, parent, lambda g: DimensionGroup(g.continuous + (name,), g.categorical))
    mapping = {n: [n] for n in h.continuous_dims if n not in dims}
    mapping[name] = dims
    return DimensionHierarchy(root), mapping


def push_down(h: DimensionHierarchy, dim: str, sep: str = "@"):
    """Move a continuous dim from a group into every child of that group's
    categorical, duplicating it per option. Returns ``(new_hierarchy, mapping)``."""
    if dim not in h.continuous_dims:
        raise HierarchyError(f"{dim!r} is not a continuous dimension")
    key = h.dim_nodes[dim]
    g = h.group_at(key)
    if g.categorical is None:
        raise HierarchyError(f"group of {dim!r} has no categorical to push into")
    cat = g.categorical
    new_names = [f"{dim}{sep}{o.label}" for o in cat.options]
    taken = set(h.dim_nodes)
    for n in new_names:
        if n in taken:
            raise HierarchyError(f"name {n!r} already used")
    opts = tuple(
        Option(o.label, DimensionGroup((n,) + o.child.continuous, o.child.categorical))
        for o, n in zip(cat.options, new_names)
    )
    root = _replace(h.root, key, lambda g: DimensionGroup(tuple(c for c in g.continuous if c != dim), Categorical(cat.name, opts)))
    mapping = {n: [n] for n in h.continuous_dims if n != dim}
    for n in new_names:
        mapping[n] = [dim]
    return DimensionHierarchy(root), mapping


def reexpress(values: np.ndarray, old: DimensionHierarchy, new: DimensionHierarchy,
              mapping: dict[str, list[str]], assignments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Carry a factor table over a merge-up/push-down.

    ``values`` is (n, len(old.continuous_dims)) with NaN where inactive. Each
    new column takes the value of whichever mapped old column is active.
    Returns ``(new_values, new_active)``.
    """
    old_idx = {n: i for i, n in enumerate(old.continuous_dims)}
    active_new = new.active_dims(assignments)
    out = np.full((len(values), len(new.continuous_dims)), np.nan)
    for j, n in enumerate(new.continuous_dims):
        src = values[:, [old_idx[s] for s in mapping[n]]]
        filled = np.where(np.isnan(src), 0.0, src).sum(axis=1)
        out[:, j] = np.where(active_new[:, j], filled, np.nan)
    return out, active_new


def flat_hierarchy(names: Sequence[str]) -> DimensionHierarchy:
    return DimensionHierarchy(DimensionGroup(tuple(names)))
