"""Finite trees of measurable cells and functions on their leaves.

A ``MeasureTree`` is a finite rooted tree whose nodes are cells: every
internal node's children partition it in measure, leaves are the atoms, and
``level`` counts generations from the root.  A ``CellFunction`` assigns one
real value to each leaf; averages, conditional expectations and martingale
differences are all computed from these two objects.

Cells that do not subdivide are represented as leaves; a cell repeated on
consecutive generations would only contribute a zero difference, so nothing
is lost by never storing repeats.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

__all__ = [
    "TreeSpec",
    "MeasureTree",
    "CellFunction",
    "build_tree",
    "random_tree",
    "average",
    "conditional_expectation",
    "martingale_difference",
]

ROOT_ID = "r"

#: relative slack allowed when explicit measures are cross-checked
_MEASURE_RTOL = 1e-12


@dataclass
class TreeSpec:
    """Declarative description of a tree, loadable from JSON or YAML.

    kind
        ``uniform``  - regular tree, every internal node splits into
        ``branching`` equal-measure children down to ``depth``.
        ``explicit`` - same shape, but the ``branching**depth`` leaf
        measures are listed in ``leaf_measures`` (left to right).
        ``random``   - seeded tree with per-node branching drawn from
        ``2..branching`` and Dirichlet-uniform positive measure splits.
    """

    kind: str = "uniform"
    depth: int = 1
    branching: int = 2
    total: float = 1.0
    leaf_measures: list[float] | None = None
    seed: int = 0
    stop_prob: float = 0.0
    leaf_budget: int = 100_000

    @classmethod
    def from_file(cls, path: str | Path) -> "TreeSpec":
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError(f"tree spec {path} must be a mapping")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown tree spec fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "depth": self.depth,
            "branching": self.branching,
            "total": self.total,
            "seed": self.seed,
        }
        if self.leaf_measures is not None:
            d["leaf_measures"] = list(self.leaf_measures)
        if self.stop_prob:
            d["stop_prob"] = self.stop_prob
        return d


class MeasureTree:
    """Finite rooted cell tree with positive measures.

    Nodes are addressed by string ids (root ``"r"``, children ``"r.0"``,
    ``"r.0.1"``, ...).  Internally nodes are stored in depth-first order so
    that every subtree occupies a contiguous index range, and the leaves of
    a node form a contiguous slice of the leaf array.  Internal measures are
    always recomputed as exact float sums of their children, which makes the
    partition identity ``sum(mu(children)) == mu(parent)`` hold without
    round-off.
    """

    def __init__(self, children_of: dict[str, list[str]], leaf_measure: dict[str, float]):
        if ROOT_ID not in children_of and ROOT_ID not in leaf_measure:
            raise ValueError(f"tree must contain the root cell {ROOT_ID!r}")
        self._build(children_of, leaf_measure)

    # -- construction -----------------------------------------------------
    def _build(self, children_of: dict[str, list[str]], leaf_measure: dict[str, float]) -> None:
        ids: list[str] = []
        parent: list[int] = []
        level: list[int] = []
        index: dict[str, int] = {}
        leaf_lo: list[int] = []
        leaf_hi: list[int] = []
        leaf_ids: list[str] = []

        # iterative DFS, children in listed order
        stack: list[tuple[str, int, int]] = [(ROOT_ID, -1, 0)]
        while stack:
            node, par, lev = stack.pop()
            idx = len(ids)
            index[node] = idx
            ids.append(node)
            parent.append(par)
            level.append(lev)
            leaf_lo.append(-1)
            leaf_hi.append(-1)
            kids = children_of.get(node, [])
            if kids:
                if len(kids) < 2:
                    raise ValueError(f"internal cell {node!r} needs at least 2 children")
                for kid in reversed(kids):
                    stack.append((kid, idx, lev + 1))
            else:
                if node not in leaf_measure:
                    raise ValueError(f"leaf cell {node!r} has no measure")
                pos = len(leaf_ids)
                leaf_ids.append(node)
                leaf_lo[idx] = pos
                leaf_hi[idx] = pos + 1

        n = len(ids)
        if len(set(ids)) != n:
            raise ValueError("duplicate cell ids")
        self.ids: list[str] = ids
        self.index: dict[str, int] = index
        self.parent = np.asarray(parent, dtype=np.int64)
        self.level = np.asarray(level, dtype=np.int64)
        self.leaf_ids: list[str] = leaf_ids
        self.n_nodes = n
        self.n_leaves = len(leaf_ids)

        lm = np.asarray([leaf_measure[l] for l in leaf_ids], dtype=float)
        if not np.all(np.isfinite(lm)) or np.any(lm <= 0.0):
            raise ValueError("every cell measure must be positive and finite")
        self.leaf_measure = lm

        # children arrays and leaf ranges, filled bottom-up (reverse DFS)
        children: list[list[int]] = [[] for _ in range(n)]
        for i in range(n - 1, 0, -1):
            children[self.parent[i]].append(i)
        for i in range(n):
            children[i].reverse()
        self.children: list[np.ndarray] = [np.asarray(c, dtype=np.int64) for c in children]

        lo = np.asarray(leaf_lo, dtype=np.int64)
        hi = np.asarray(leaf_hi, dtype=np.int64)
        measure = np.zeros(n, dtype=float)
        for i in range(n - 1, -1, -1):
            kids = self.children[i]
            if kids.size:
                lo[i] = lo[kids[0]]
                hi[i] = hi[kids[-1]]
                measure[i] = math.fsum(measure[k] for k in kids)
            else:
                measure[i] = lm[lo[i]]
        self.leaf_lo = lo
        self.leaf_hi = hi
        self.measure = measure
        self.root = 0
        self.max_level = int(self.level.max())
        self.is_leaf = np.asarray([c.size == 0 for c in self.children], dtype=bool)
        self.internal_nodes = np.nonzero(~self.is_leaf)[0]
        self.leaf_nodes = np.nonzero(self.is_leaf)[0]
        # node indices grouped by level, for vectorized chain walks
        self.nodes_by_level: list[np.ndarray] = [
            np.nonzero(self.level == lev)[0] for lev in range(self.max_level + 1)
        ]
        # position of each leaf node in leaf order
        self.leaf_pos_of_node = np.full(n, -1, dtype=np.int64)
        self.leaf_pos_of_node[self.leaf_nodes] = lo[self.leaf_nodes]
        # interleaved [lo0, hi0, lo1, hi1, ...] for segmented reduction
        self._segment_idx = np.empty(2 * n, dtype=np.int64)
        self._segment_idx[0::2] = lo
        self._segment_idx[1::2] = hi

    # -- queries -----------------------------------------------------------
    def node(self, node_id: str) -> int:
        try:
            return self.index[node_id]
        except KeyError:
            raise KeyError(f"cell {node_id!r} is not in this tree") from None

    def leaf_slice(self, i: int) -> slice:
        return slice(int(self.leaf_lo[i]), int(self.leaf_hi[i]))

    def subtree_range(self, i: int) -> tuple[int, int]:
        """DFS index range [i, j) of the subtree of ``i``.

        Nodes are stored in DFS order and leaf_lo is non-decreasing along it,
        so the subtree ends at the first node whose leaves start past ours.
        """
        j = int(np.searchsorted(self.leaf_lo, self.leaf_hi[i], side="left"))
        return i, j

    def subtree_nodes(self, i: int) -> np.ndarray:
        lo, hi = self.subtree_range(i)
        return np.arange(lo, hi)

    def _inside(self, anc: int, node: int) -> bool:
        return self.leaf_lo[node] >= self.leaf_lo[anc] and self.leaf_hi[node] <= self.leaf_hi[anc]

    def ancestors(self, i: int) -> list[int]:
        out = []
        while i != -1:
            out.append(i)
            i = int(self.parent[i])
        return out

    def contains(self, anc: int, node: int) -> bool:
        if self.is_leaf[anc]:
            return anc == node
        return self._inside(anc, node)

    def partition_at_level(self, n: int) -> list[int]:
        """Cells forming the generation-``n`` partition of the root.

        A cell that stopped subdividing before generation ``n`` persists, so
        the partition is: nodes at level ``n`` plus leaves at shallower levels.
        """
        if n < 0 or n > self.max_level:
            raise ValueError(f"level {n} out of range 0..{self.max_level}")
        sel = (self.level == n) | (self.is_leaf & (self.level < n))
        return [int(i) for i in np.nonzero(sel)[0]]

    # -- node averages ------------------------------------------------------
    def node_sums(self, leaf_values: np.ndarray) -> np.ndarray:
        """Integral of a leaf-valued function over every node.

        Summed per subtree segment (not by prefix differences, whose
        cancellation would cost several digits on mixed-sign data).
        """
        weighted = np.append(leaf_values * self.leaf_measure, 0.0)
        return np.add.reduceat(weighted, self._segment_idx)[0::2]

    def node_averages(self, leaf_values: np.ndarray) -> np.ndarray:
        return self.node_sums(leaf_values) / self.measure

    def validate(self) -> None:
        """Re-check the structural invariants (used by tests and loaders)."""
        for i in self.internal_nodes:
            kids = self.children[i]
            s = math.fsum(float(self.measure[k]) for k in kids)
            if s != self.measure[i]:
                rel = abs(s - self.measure[i]) / self.measure[i]
                if rel > _MEASURE_RTOL:
                    raise ValueError(f"children of {self.ids[i]!r} do not partition it")
            for k in kids:
                if self.level[k] != self.level[i] + 1:
                    raise ValueError("levels are not generational")
        if np.any(self.measure <= 0):
            raise ValueError("non-positive cell measure")

    # -- replayable serialization -------------------------------------------
    def to_serializable(self) -> dict:
        """Full structural dump (children lists + leaf measures), replayable."""
        return {
            "children": {
                self.ids[i]: [self.ids[k] for k in self.children[i]]
                for i in self.internal_nodes
            },
            "leaf_measure": {
                lid: float(m) for lid, m in zip(self.leaf_ids, self.leaf_measure)
            },
        }

    @classmethod
    def from_serializable(cls, data: dict) -> "MeasureTree":
        return cls(dict(data["children"]), dict(data["leaf_measure"]))

    def __repr__(self) -> str:
        return (
            f"MeasureTree(nodes={self.n_nodes}, leaves={self.n_leaves}, "
            f"depth={self.max_level}, mu={self.measure[0]:.6g})"
        )


@dataclass
class CellFunction:
    """Real function measurable w.r.t. the finest partition of a tree."""

    tree: MeasureTree
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.tree.n_leaves,):
            raise ValueError(
                f"expected {self.tree.n_leaves} leaf values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("leaf values must be finite")
        self.values = v

    # -- algebra -------------------------------------------------------------
    def __add__(self, other: "CellFunction") -> "CellFunction":
        self._check(other)
        return CellFunction(self.tree, self.values + other.values)

    def __sub__(self, other: "CellFunction") -> "CellFunction":
        self._check(other)
        return CellFunction(self.tree, self.values - other.values)

    def __mul__(self, c: float) -> "CellFunction":
        return CellFunction(self.tree, self.values * c)

    __rmul__ = __mul__

    def __abs__(self) -> "CellFunction":
        return CellFunction(self.tree, np.abs(self.values))

    def _check(self, other: "CellFunction") -> None:
        if other.tree is not self.tree:
            raise ValueError("cell functions live on different trees")

    # -- integrals -------------------------------------------------------------
    def integral(self) -> float:
        return float(np.dot(self.values, self.tree.leaf_measure))

    def norm_l1(self) -> float:
        return float(np.dot(np.abs(self.values), self.tree.leaf_measure))

    def norm_l2(self) -> float:
        return float(np.sqrt(np.dot(self.values**2, self.tree.leaf_measure)))

    def norm_lp(self, p: float) -> float:
        return float(np.dot(np.abs(self.values) ** p, self.tree.leaf_measure) ** (1.0 / p))

    def restrict(self, node: int) -> "CellFunction":
        """Zero the function outside the given cell."""
        out = np.zeros_like(self.values)
        sl = self.tree.leaf_slice(node)
        out[sl] = self.values[sl]
        return CellFunction(self.tree, out)

    def value_at(self, leaf_id: str) -> float:
        i = self.tree.node(leaf_id)
        if not self.tree.is_leaf[i]:
            raise KeyError(f"{leaf_id!r} is not a leaf")
        return float(self.values[self.tree.leaf_pos_of_node[i]])

    # -- serialization ----------------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("leaf_id,value\n")
            for lid, v in zip(self.tree.leaf_ids, self.values):
                fh.write(f"{lid},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, tree: MeasureTree, path: str | Path) -> "CellFunction":
        values = np.zeros(tree.n_leaves)
        seen = np.zeros(tree.n_leaves, dtype=bool)
        with open(path) as fh:
            header = fh.readline().strip()
            if header.replace(" ", "") != "leaf_id,value":
                raise ValueError(f"{path}: expected header 'leaf_id,value'")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                lid, _, val = line.partition(",")
                i = tree.node(lid.strip())
                if not tree.is_leaf[i]:
                    raise ValueError(f"{path}: {lid!r} is not a leaf")
                pos = tree.leaf_pos_of_node[i]
                values[pos] = float(val)
                seen[pos] = True
        if not seen.all():
            missing = [tree.leaf_ids[i] for i in np.nonzero(~seen)[0][:5]]
            raise ValueError(f"{path}: missing values for leaves {missing}")
        return cls(tree, values)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _uniform_shape(depth: int, branching: int) -> dict[str, list[str]]:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth > 0 and branching < 2:
        raise ValueError("branching must be >= 2")
    children: dict[str, list[str]] = {}
    frontier = [ROOT_ID]
    for _ in range(depth):
        nxt = []
        for node in frontier:
            kids = [f"{node}.{j}" for j in range(branching)]
            children[node] = kids
            nxt.extend(kids)
        frontier = nxt
    return children


def build_tree(spec: TreeSpec) -> MeasureTree:
    """Materialize a tree from its spec; deterministic given (spec, seed)."""
    if spec.total <= 0 or not math.isfinite(spec.total):
        raise ValueError("total measure must be positive and finite")
    if spec.kind == "uniform":
        children = _uniform_shape(spec.depth, spec.branching)
        n_leaves = spec.branching**spec.depth if spec.depth > 0 else 1
        per_leaf = spec.total / n_leaves
        frontier = _frontier_leaves(children)
        leaf_measure = {l: per_leaf for l in frontier}
        return MeasureTree(children, leaf_measure)
    if spec.kind == "explicit":
        children = _uniform_shape(spec.depth, spec.branching)
        frontier = _frontier_leaves(children)
        if spec.leaf_measures is None:
            raise ValueError("explicit spec requires leaf_measures")
        if len(spec.leaf_measures) != len(frontier):
            raise ValueError(
                f"expected {len(frontier)} leaf measures, got {len(spec.leaf_measures)}"
            )
        for m in spec.leaf_measures:
            if not (m > 0 and math.isfinite(m)):
                raise ValueError("leaf measures must be positive and finite")
        declared = math.fsum(spec.leaf_measures)
        if abs(declared - spec.total) > _MEASURE_RTOL * max(abs(spec.total), 1.0):
            raise ValueError(
                f"leaf measures sum to {declared}, declared total {spec.total}"
            )
        leaf_measure = dict(zip(frontier, map(float, spec.leaf_measures)))
        return MeasureTree(children, leaf_measure)
    if spec.kind == "random":
        rng = np.random.default_rng(spec.seed)
        return random_tree(
            rng,
            max_depth=spec.depth,
            max_branching=spec.branching,
            total=spec.total,
            stop_prob=spec.stop_prob,
            leaf_budget=spec.leaf_budget,
        )
    raise ValueError(f"unknown tree kind {spec.kind!r}")


def _frontier_leaves(children: dict[str, list[str]]) -> list[str]:
    if not children:
        return [ROOT_ID]
    order: list[str] = []
    stack = [ROOT_ID]
    while stack:
        node = stack.pop()
        kids = children.get(node)
        if kids:
            stack.extend(reversed(kids))
        else:
            order.append(node)
    return order


def random_tree(
    rng: np.random.Generator,
    max_depth: int = 8,
    max_branching: int = 4,
    total: float = 1.0,
    stop_prob: float = 0.0,
    leaf_budget: int = 100_000,
) -> MeasureTree:
    """Random tree: branching in 2..max_branching, Dirichlet measure splits.

    ``stop_prob`` lets non-root cells stop subdividing early, which produces
    leaves on several levels (the degenerate case of a cell persisting across
    generations).  ``leaf_budget`` caps growth so deep wide specs stay usable.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    children: dict[str, list[str]] = {}
    leaf_measure: dict[str, float] = {}
    n_leaves = 1
    # (node, depth, measure); expand in BFS order so the budget cuts evenly
    from collections import deque

    queue = deque([(ROOT_ID, 0, float(total))])
    while queue:
        node, depth, mu = queue.popleft()
        stop = depth >= max_depth or (
            depth > 0 and stop_prob > 0 and rng.random() < stop_prob
        )
        if stop or n_leaves >= leaf_budget:
            leaf_measure[node] = mu
            continue
        k = int(rng.integers(2, max_branching + 1))
        props = rng.dirichlet(np.ones(k))
        # guard against degenerate tiny splits
        props = np.maximum(props, 1e-6)
        props = props / props.sum()
        kids = [f"{node}.{j}" for j in range(k)]
        children[node] = kids
        n_leaves += k - 1
        for kid, p in zip(kids, props):
            queue.append((kid, depth + 1, mu * float(p)))
    return MeasureTree(children, leaf_measure)


# ---------------------------------------------------------------------------
# elementary martingale operations
# ---------------------------------------------------------------------------

def average(f: CellFunction, node: int | str) -> float:
    """Mean of f over a cell: integral over the cell divided by its measure."""
    t = f.tree
    i = t.node(node) if isinstance(node, str) else node
    sl = t.leaf_slice(i)
    return float(np.dot(f.values[sl], t.leaf_measure[sl]) / t.measure[i])


def conditional_expectation(f: CellFunction, n: int) -> CellFunction:
    """Project f onto the generation-``n`` partition (cellwise averages)."""
    t = f.tree
    cells = t.partition_at_level(n)
    out = np.empty_like(f.values)
    avgs = t.node_averages(f.values)
    for i in cells:
        out[t.leaf_slice(i)] = avgs[i]
    return CellFunction(t, out)


def martingale_difference(f: CellFunction, node: int | str) -> CellFunction:
    """Oscillation of f at one internal cell: child averages minus the parent
    average, supported on the cell, with zero integral."""
    t = f.tree
    i = t.node(node) if isinstance(node, str) else node
    if t.is_leaf[i]:
        raise ValueError(f"cell {t.ids[i]!r} is a leaf; differences live on internal cells")
    avgs = t.node_averages(f.values)
    out = np.zeros_like(f.values)
    for k in t.children[i]:
        out[t.leaf_slice(k)] = avgs[k] - avgs[i]
    return CellFunction(t, out)
