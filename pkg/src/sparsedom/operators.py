"""Operators on cell trees: transforms, truncations, sparse sums, paraproducts.

All operators here are linear in the input function and pure: nothing
mutates the tree or its inputs.  The workhorses are chain accumulations down
root-to-leaf paths, vectorized level by level, so a whole subtree is
processed with one numpy call per generation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .tree import CellFunction, MeasureTree

__all__ = [
    "SignSequence",
    "SparseCollection",
    "SparseReport",
    "CarlesonFamily",
    "LinearOperatorHandle",
    "transform",
    "maximal_truncation",
    "dyadic_maximal",
    "sparse_apply",
    "check_sparse",
    "paraproduct",
    "paraproduct_truncation",
    "carleson_norm",
    "transform_operator",
    "sparse_operator",
    "paraproduct_operator",
    "weak_l1_ratio",
]


# ---------------------------------------------------------------------------
# chain walks
# ---------------------------------------------------------------------------

def _subtree_level_groups(tree: MeasureTree, lo: int, hi: int, start_level: int):
    """Yield node-index arrays of the subtree [lo, hi), one level at a time."""
    for lev in range(start_level + 1, tree.max_level + 1):
        grp = tree.nodes_by_level[lev]
        a, b = np.searchsorted(grp, (lo, hi))
        if a == b:
            break
        yield grp[a:b]


def chain_values(
    tree: MeasureTree, top: int, increments: np.ndarray, seed: float = 0.0
) -> np.ndarray:
    """Cumulative sums of per-edge increments along every chain below ``top``.

    Returns an array indexed by DFS offset within the subtree:
    ``val[node-lo] = seed + sum of increments over ancestors down to node``.
    """
    lo, hi = tree.subtree_range(top)
    val = np.empty(hi - lo)
    val[0] = seed
    for nodes in _subtree_level_groups(tree, lo, hi, int(tree.level[top])):
        val[nodes - lo] = val[tree.parent[nodes] - lo] + increments[nodes]
    return val


def chain_max_abs(
    tree: MeasureTree, top: int, increments: np.ndarray, seed: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Running max of |cumulative sums| along chains below ``top``.

    Returns ``(val, cmax)`` indexed by DFS offset: the chain value and the
    max of |value| over the chain prefix ending at each node.
    """
    lo, hi = tree.subtree_range(top)
    val = np.empty(hi - lo)
    cmax = np.empty(hi - lo)
    val[0] = seed
    cmax[0] = abs(seed)
    for nodes in _subtree_level_groups(tree, lo, hi, int(tree.level[top])):
        v = val[tree.parent[nodes] - lo] + increments[nodes]
        val[nodes - lo] = v
        cmax[nodes - lo] = np.maximum(cmax[tree.parent[nodes] - lo], np.abs(v))
    return val, cmax


def chain_running_max(tree: MeasureTree, top: int, node_values: np.ndarray) -> np.ndarray:
    """Running max of per-node values along chains below ``top`` (inclusive)."""
    lo, hi = tree.subtree_range(top)
    out = np.empty(hi - lo)
    out[0] = node_values[top]
    for nodes in _subtree_level_groups(tree, lo, hi, int(tree.level[top])):
        out[nodes - lo] = np.maximum(out[tree.parent[nodes] - lo], node_values[nodes])
    return out


def _leaf_view(tree: MeasureTree, top: int, subtree_array: np.ndarray) -> np.ndarray:
    """Extract leaf-ordered values from a subtree-indexed array."""
    lo, hi = tree.subtree_range(top)
    leaves = tree.leaf_nodes[
        np.searchsorted(tree.leaf_nodes, lo) : np.searchsorted(tree.leaf_nodes, hi)
    ]
    out = np.zeros(tree.n_leaves)
    out[tree.leaf_pos_of_node[leaves]] = subtree_array[leaves - lo]
    return out


# ---------------------------------------------------------------------------
# sign sequences and martingale transforms
# ---------------------------------------------------------------------------

@dataclass
class SignSequence:
    """Multipliers eps in [-1, 1], one per internal cell."""

    tree: MeasureTree
    eps: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        e = np.asarray(self.eps, dtype=float)
        if e.shape != (self.tree.n_nodes,):
            raise ValueError("eps must have one entry per tree node")
        internal = ~self.tree.is_leaf
        if np.any(np.abs(e[internal]) > 1.0 + 1e-15):
            raise ValueError("multipliers must satisfy |eps| <= 1")
        e = e.copy()
        e[self.tree.is_leaf] = 0.0
        self.eps = e

    @classmethod
    def constant(cls, tree: MeasureTree, value: float = 1.0) -> "SignSequence":
        return cls(tree, np.full(tree.n_nodes, value))

    @classmethod
    def alternating(cls, tree: MeasureTree) -> "SignSequence":
        """+1 on even generations, -1 on odd ones."""
        return cls(tree, np.where(tree.level % 2 == 0, 1.0, -1.0))

    @classmethod
    def random_signs(cls, tree: MeasureTree, rng: np.random.Generator) -> "SignSequence":
        return cls(tree, rng.choice([-1.0, 1.0], size=tree.n_nodes))

    @classmethod
    def single(cls, tree: MeasureTree, node_id: str, value: float = 1.0) -> "SignSequence":
        e = np.zeros(tree.n_nodes)
        e[tree.node(node_id)] = value
        return cls(tree, e)

    def negated(self) -> "SignSequence":
        return SignSequence(self.tree, -self.eps)

    # -- serialization -------------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("node_id,eps\n")
            for i in self.tree.internal_nodes:
                fh.write(f"{self.tree.ids[i]},{float(self.eps[i])!r}\n")

    @classmethod
    def from_csv(cls, tree: MeasureTree, path: str | Path) -> "SignSequence":
        e = np.zeros(tree.n_nodes)
        with open(path) as fh:
            header = fh.readline().strip().replace(" ", "")
            if header != "node_id,eps":
                raise ValueError(f"{path}: expected header 'node_id,eps'")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                nid, _, val = line.partition(",")
                i = tree.node(nid.strip())
                if tree.is_leaf[i]:
                    raise ValueError(f"{path}: {nid!r} is a leaf; multipliers sit on internal cells")
                e[i] = float(val)
        return cls(tree, e)


def _difference_increments(tree: MeasureTree, eps: np.ndarray, avgs: np.ndarray) -> np.ndarray:
    """Per-edge term eps[parent] * (avg[node] - avg[parent]); zero at the root."""
    inc = np.zeros(tree.n_nodes)
    nodes = np.arange(1, tree.n_nodes)
    par = tree.parent[nodes]
    inc[nodes] = eps[par] * (avgs[nodes] - avgs[par])
    return inc


def _require_same_tree(a, b) -> None:
    if a.tree is not b.tree:
        raise ValueError("operands live on different trees")


def transform(eps: SignSequence, f: CellFunction) -> CellFunction:
    """Apply the martingale transform: signed sum of all cell differences."""
    _require_same_tree(eps, f)
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = _difference_increments(t, eps.eps, avgs)
    val = chain_values(t, t.root, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, t.root, val))


def maximal_truncation(eps: SignSequence, f: CellFunction) -> CellFunction:
    """Largest |partial sum| over truncation levels of the transform.

    At each leaf this is the max of |value| over all prefixes of the root
    chain, the empty prefix (0) and the full sum included, so the result is
    nonnegative and dominates |transform| pointwise.
    """
    _require_same_tree(eps, f)
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = _difference_increments(t, eps.eps, avgs)
    _, cmax = chain_max_abs(t, t.root, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, t.root, cmax))


def dyadic_maximal(f: CellFunction, node: int | str = 0) -> CellFunction:
    """Cell maximal function below ``node``: sup of mean |f| over containing
    cells inside that subtree; zero outside it."""
    t = f.tree
    top = t.node(node) if isinstance(node, str) else node
    abs_avgs = t.node_averages(np.abs(f.values))
    runmax = chain_running_max(t, top, abs_avgs)
    return CellFunction(t, _leaf_view(t, top, runmax))


# ---------------------------------------------------------------------------
# sparse collections
# ---------------------------------------------------------------------------

@dataclass
class SparseCollection:
    """A set of cells; intended to satisfy the half-packing condition
    (each member's maximal sub-members cover at most half its measure)."""

    tree: MeasureTree
    members: frozenset[int]

    def __post_init__(self) -> None:
        members = frozenset(int(m) for m in self.members)
        for m in members:
            if not 0 <= m < self.tree.n_nodes:
                raise ValueError(f"member index {m} out of range")
        self.members = members

    @classmethod
    def from_ids(cls, tree: MeasureTree, ids: Iterable[str]) -> "SparseCollection":
        return cls(tree, frozenset(tree.node(i) for i in ids))

    def member_ids(self) -> list[str]:
        return sorted(self.tree.ids[m] for m in self.members)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("node_id\n")
            for nid in self.member_ids():
                fh.write(f"{nid}\n")

    @classmethod
    def from_csv(cls, tree: MeasureTree, path: str | Path) -> "SparseCollection":
        ids = []
        with open(path) as fh:
            header = fh.readline().strip().replace(" ", "")
            if header != "node_id":
                raise ValueError(f"{path}: expected header 'node_id'")
            for line in fh:
                line = line.strip()
                if line:
                    ids.append(line)
        return cls.from_ids(tree, ids)


def sparse_apply(S: SparseCollection, f: CellFunction) -> CellFunction:
    """Sum over members of (mean of f over the member) on that member."""
    _require_same_tree(S, f)
    t = f.tree
    avgs = t.node_averages(f.values)
    out = np.zeros(t.n_leaves)
    for m in S.members:
        out[t.leaf_slice(m)] += avgs[m]
    return CellFunction(t, out)


@dataclass
class SparseReport:
    valid: bool
    worst_ratio: float
    witness: str | None


def check_sparse(S: SparseCollection, slack: float = 1e-12) -> SparseReport:
    """Verify the half-packing condition member by member.

    For each member P, its collection-children are the maximal members
    strictly inside P; packing requires their total measure to be at most
    half of P's.  Reports the worst ratio and a maximizing member.
    """
    t = S.tree
    members = S.members
    child_mass: dict[int, float] = {}
    for m in members:
        # nearest strict ancestor that is also a member
        p = int(t.parent[m])
        while p != -1 and p not in members:
            p = int(t.parent[p])
        if p != -1:
            child_mass[p] = child_mass.get(p, 0.0) + float(t.measure[m])
    worst = 0.0
    witness: str | None = None
    for p, mass in child_mass.items():
        ratio = mass / float(t.measure[p])
        if ratio > worst:
            worst = ratio
            witness = t.ids[p]
    valid = worst <= 0.5 + slack
    return SparseReport(valid=valid, worst_ratio=worst, witness=witness)


# ---------------------------------------------------------------------------
# Carleson families and paraproducts
# ---------------------------------------------------------------------------

class CarlesonFamily:
    """Coefficient family b_Q, one function per internal cell, each living in
    that cell's difference space (constant on children, zero integral), with
    the l-infinity square-mass normalization at most one on every cell.
    """

    def __init__(
        self,
        tree: MeasureTree,
        coefficients: dict[int, np.ndarray],
        tol: float = 1e-9,
        validate_norm: bool = True,
    ):
        self.tree = tree
        coeffs: dict[int, np.ndarray] = {}
        for node, c in coefficients.items():
            node = int(node)
            kids = tree.children[node]
            if kids.size == 0:
                raise ValueError(f"{tree.ids[node]!r} is a leaf; coefficients live on internal cells")
            c = np.asarray(c, dtype=float)
            if c.shape != (kids.size,):
                raise ValueError(
                    f"{tree.ids[node]!r}: expected {kids.size} child constants, got {c.shape}"
                )
            mass = float(np.dot(c, tree.measure[kids]))
            scale = float(np.max(np.abs(c))) if c.size else 0.0
            if scale > 0 and abs(mass) > tol * scale * tree.measure[node]:
                raise ValueError(
                    f"{tree.ids[node]!r}: coefficients must integrate to zero over the cell"
                )
            if scale > 0:
                coeffs[node] = c
        self.coefficients = coeffs
        if validate_norm:
            nrm = carleson_norm(self)
            if nrm > 1.0 + 1e-9:
                raise ValueError(f"square-mass normalization exceeded: {nrm}")

    @classmethod
    def random(
        cls,
        tree: MeasureTree,
        rng: np.random.Generator,
        density: float = 1.0,
    ) -> "CarlesonFamily":
        """Random family rescaled so its normalization constant is exactly 1."""
        coeffs: dict[int, np.ndarray] = {}
        for i in tree.internal_nodes:
            if rng.random() > density:
                continue
            kids = tree.children[i]
            c = rng.standard_normal(kids.size)
            mu = tree.measure[kids]
            c = c - np.dot(c, mu) / tree.measure[i]
            if np.max(np.abs(c)) > 0:
                coeffs[int(i)] = c
        fam = cls(tree, coeffs, validate_norm=False)
        nrm = carleson_norm(fam)
        if nrm > 0:
            s = 1.0 / math.sqrt(nrm)
            fam = cls(tree, {n: c * s for n, c in coeffs.items()}, validate_norm=False)
        return fam

    @classmethod
    def from_cell_functions(
        cls, tree: MeasureTree, funcs: dict[str, CellFunction], tol: float = 1e-9
    ) -> "CarlesonFamily":
        """Build from per-cell functions, validating that each lies in its
        cell's difference space: supported on the cell, constant on each
        child, zero integral."""
        coeffs: dict[int, np.ndarray] = {}
        for node_id, fn in funcs.items():
            i = tree.node(node_id)
            kids = tree.children[i]
            if kids.size == 0:
                raise ValueError(f"{node_id!r} is a leaf; coefficients live on internal cells")
            vals = fn.values
            scale = float(np.max(np.abs(vals)))
            outside = vals.copy()
            outside[tree.leaf_slice(i)] = 0.0
            if np.any(np.abs(outside) > tol * max(scale, 1.0)):
                raise ValueError(f"{node_id!r}: function is not supported on its cell")
            c = np.empty(kids.size)
            for pos, kid in enumerate(kids):
                sl = tree.leaf_slice(int(kid))
                block = vals[sl]
                c[pos] = block[0]
                if np.any(np.abs(block - block[0]) > tol * max(scale, 1.0)):
                    raise ValueError(f"{node_id!r}: function is not constant on child cells")
            coeffs[i] = c
        return cls(tree, coeffs)

    def cell_function(self, node: int | str) -> CellFunction:
        t = self.tree
        i = t.node(node) if isinstance(node, str) else node
        out = np.zeros(t.n_leaves)
        c = self.coefficients.get(i)
        if c is not None:
            for ck, k in zip(c, t.children[i]):
                out[t.leaf_slice(k)] = ck
        return CellFunction(t, out)

    def increments(self, node_weights: np.ndarray) -> np.ndarray:
        """Per-edge array inc[child] = weight[parent] * coefficient, used by
        chain walks; zero where no coefficient is present."""
        inc = np.zeros(self.tree.n_nodes)
        for q, c in self.coefficients.items():
            inc[self.tree.children[q]] = node_weights[q] * c
        return inc

    def scaled(self, s: float) -> "CarlesonFamily":
        return CarlesonFamily(
            self.tree,
            {n: c * s for n, c in self.coefficients.items()},
            validate_norm=False,
        )


def carleson_norm(b: CarlesonFamily) -> float:
    """Largest, over cells P, of the relative square mass
    sum_{Q inside P} sup|b_Q|^2 mu(Q) / mu(P)."""
    t = b.tree
    load = np.zeros(t.n_nodes)
    for q, c in b.coefficients.items():
        load[q] = float(np.max(np.abs(c))) ** 2 * t.measure[q]
    # subtree sums via DFS contiguity
    csum = np.concatenate([[0.0], np.cumsum(load)])
    best = 0.0
    for p in t.internal_nodes:
        lo, hi = t.subtree_range(p)
        s = csum[hi] - csum[lo]
        best = max(best, s / t.measure[p])
    return best


def paraproduct(b: CarlesonFamily, f: CellFunction) -> CellFunction:
    """Sum over cells of (mean of f on the cell) times that cell's b function."""
    _require_same_tree(b, f)
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = b.increments(avgs)
    val = chain_values(t, t.root, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, t.root, val))


def paraproduct_truncation(b: CarlesonFamily, f: CellFunction) -> CellFunction:
    """Largest |partial sum| of the paraproduct over truncation levels."""
    _require_same_tree(b, f)
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = b.increments(avgs)
    _, cmax = chain_max_abs(t, t.root, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, t.root, cmax))


# ---------------------------------------------------------------------------
# operator handles (shared with the weighted-norm machinery)
# ---------------------------------------------------------------------------

@dataclass
class LinearOperatorHandle:
    """A linear map on leaf vectors together with its adjoint in L2(mu)."""

    tree: MeasureTree
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    name: str = "operator"

    def __call__(self, f: CellFunction) -> CellFunction:
        _require_same_tree(self, f)
        return CellFunction(self.tree, self.apply(f.values))


def transform_operator(eps: SignSequence) -> LinearOperatorHandle:
    t = eps.tree

    def apply(v: np.ndarray) -> np.ndarray:
        avgs = t.node_averages(v)
        inc = _difference_increments(t, eps.eps, avgs)
        return _leaf_view(t, t.root, chain_values(t, t.root, inc))

    # each difference is an orthogonal projection in L2(mu), so the signed
    # sum is self-adjoint
    return LinearOperatorHandle(t, apply, apply, name="transform")


def sparse_operator(S: SparseCollection) -> LinearOperatorHandle:
    t = S.tree
    members = sorted(S.members)

    def apply(v: np.ndarray) -> np.ndarray:
        avgs = t.node_averages(v)
        out = np.zeros(t.n_leaves)
        for m in members:
            out[t.leaf_slice(m)] += avgs[m]
        return out

    return LinearOperatorHandle(t, apply, apply, name="sparse")


def paraproduct_operator(b: CarlesonFamily) -> LinearOperatorHandle:
    t = b.tree

    def apply(v: np.ndarray) -> np.ndarray:
        avgs = t.node_averages(v)
        inc = b.increments(avgs)
        return _leaf_view(t, t.root, chain_values(t, t.root, inc))

    def adjoint(v: np.ndarray) -> np.ndarray:
        sums = t.node_sums(v)
        gamma = np.zeros(t.n_nodes)
        for q, c in b.coefficients.items():
            gamma[q] = float(np.dot(c, sums[t.children[q]])) / t.measure[q]
        val = chain_values(t, t.root, gamma, seed=gamma[t.root])
        return _leaf_view(t, t.root, val)

    return LinearOperatorHandle(t, apply, adjoint, name="paraproduct")


# ---------------------------------------------------------------------------
# empirical weak-L1 statistic
# ---------------------------------------------------------------------------

def weak_l1_ratio(g: CellFunction, f: CellFunction) -> float:
    """sup over thresholds of  threshold * mu({g > threshold}) / ||f||_1.

    Exact on a finite tree: the sup is attained just below a value of g.
    """
    l1 = f.norm_l1()
    if l1 == 0:
        return 0.0
    vals = g.values
    mu = g.tree.leaf_measure
    order = np.argsort(vals)[::-1]
    v = vals[order]
    cm = np.cumsum(mu[order])
    pos = v > 0
    if not np.any(pos):
        return 0.0
    return float(np.max(v[pos] * cm[pos]) / l1)
