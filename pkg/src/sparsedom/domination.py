"""Recursive construction of sparse majorants for transforms and paraproducts.

Given multipliers and a function supported on a base cell, the constructor
produces a collection of stopping cells with the half-packing property and a
constant C such that the transform (or its maximal truncation, or a
paraproduct) is pointwise bounded on the base cell by C times the sparse
operator applied to |f|.  An independent verifier recomputes the pointwise
ratio; nothing is trusted from the construction itself.

The recursion localizes cleanly: averages of f over cells inside P coincide
with averages of f restricted to P, so one set of global per-node averages
serves every recursion node.  Each stopping cell P carries a scalar left
over from splitting its parent's difference; chains below P are seeded with
it.  Thresholds are chosen adaptively as the smallest observed level whose
strict super-level set occupies at most half of P, which enforces the
packing property by construction and makes C an output of the algorithm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import (
    CarlesonFamily,
    SignSequence,
    SparseCollection,
    chain_max_abs,
    chain_running_max,
    chain_values,
    _difference_increments,
    _leaf_view,
    _require_same_tree,
)
from .tree import CellFunction, MeasureTree

__all__ = [
    "DominationResult",
    "VerifyReport",
    "dominate",
    "dominate_truncation",
    "dominate_paraproduct",
    "verify_domination",
    "local_transform",
    "local_truncation",
    "local_paraproduct",
]


@dataclass
class LevelStats:
    threshold: float
    exceptional_fraction: float


@dataclass
class DominationResult:
    sparse: SparseCollection
    constant: float
    levels: dict[str, LevelStats] = field(repr=False)
    recursion_depth: int = 0
    node_count: int = 0


@dataclass
class VerifyReport:
    ok: bool
    C_needed: float
    worst_leaf: str | None


# ---------------------------------------------------------------------------
# localized operators (sums over cells inside the base cell only)
# ---------------------------------------------------------------------------

def local_transform(eps: SignSequence, f: CellFunction, base: int) -> CellFunction:
    """Signed difference sum restricted to cells inside ``base``.

    With the base at the root this is the full transform.
    """
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = _difference_increments(t, eps.eps, avgs)
    val = chain_values(t, base, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, base, val))


def local_truncation(eps: SignSequence, f: CellFunction, base: int) -> CellFunction:
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = _difference_increments(t, eps.eps, avgs)
    _, cmax = chain_max_abs(t, base, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, base, cmax))


def local_paraproduct(b: CarlesonFamily, f: CellFunction, base: int) -> CellFunction:
    t = f.tree
    avgs = t.node_averages(f.values)
    inc = b.increments(avgs)
    val = chain_values(t, base, inc, seed=0.0)
    return CellFunction(t, _leaf_view(t, base, val))


# ---------------------------------------------------------------------------
# the recursion
# ---------------------------------------------------------------------------

def _resolve_base(f: CellFunction, base) -> int:
    t = f.tree
    q0 = t.node(base) if isinstance(base, str) else int(base)
    outside = f.values.copy()
    outside[t.leaf_slice(q0)] = 0.0
    if np.any(outside != 0.0):
        raise ValueError("function must vanish outside the base cell")
    return q0


def _smallest_valid_threshold(
    m: np.ndarray, mu: np.ndarray, target: float
) -> tuple[float, np.ndarray]:
    """Smallest observed value lam with mu({m > lam}) <= target.

    Returns the threshold and the strict exceedance mask.  Always succeeds:
    the largest observed value has an empty strict super-level set.
    """
    order = np.argsort(m)
    mv = m[order]
    muv = mu[order]
    total = muv.sum()
    # tail measure strictly above each sorted position's value
    tail = total - np.cumsum(muv)
    # last index of each run of equal values carries that value's true tail
    uniq_last = np.nonzero(np.diff(mv, append=np.inf) != 0)[0]
    ok = tail[uniq_last] <= target
    assert ok.any(), "threshold search must succeed on a finite tree"
    lam = float(mv[uniq_last[int(np.argmax(ok))]])
    return lam, m > lam


def _dominate_core(
    tree: MeasureTree,
    f: CellFunction,
    base: int,
    increments: np.ndarray,
    child_carry: np.ndarray | None,
) -> DominationResult:
    """Shared stopping-time recursion.

    ``increments`` drive the chain partial sums of the operator being
    dominated; ``child_carry`` gives the scalar seeded into a stopping
    child's subtree (None means all carries are zero, as for paraproducts).
    """
    abs_avgs = tree.node_averages(np.abs(f.values))
    abs_sums = abs_avgs * tree.measure

    if abs_sums[base] == 0.0:
        return DominationResult(
            sparse=SparseCollection(tree, frozenset({base})),
            constant=1.0,
            levels={tree.ids[base]: LevelStats(0.0, 0.0)},
            recursion_depth=1,
            node_count=1,
        )

    members: set[int] = set()
    levels: dict[str, LevelStats] = {}
    max_kappa = 0.0
    max_depth = 0

    stack: list[tuple[int, float, int]] = [(base, 0.0, 1)]
    while stack:
        p, carry, depth = stack.pop()
        members.add(p)
        max_depth = max(max_depth, depth)

        lo, hi = tree.subtree_range(p)
        _, cmax = chain_max_abs(tree, p, increments, seed=carry)
        runmax = chain_running_max(tree, p, abs_avgs)

        leaves = tree.leaf_nodes[
            np.searchsorted(tree.leaf_nodes, lo) : np.searchsorted(tree.leaf_nodes, hi)
        ]
        m = np.maximum(cmax[leaves - lo], runmax[leaves - lo])
        mu = tree.leaf_measure[tree.leaf_pos_of_node[leaves]]

        lam, exceed = _smallest_valid_threshold(m, mu, 0.5 * tree.measure[p])
        e_mass = float(mu[exceed].sum())
        levels[tree.ids[p]] = LevelStats(lam, e_mass / float(tree.measure[p]))
        max_kappa = max(max_kappa, lam / abs_avgs[p])

        if not exceed.any():
            continue

        # maximal cells whose leaves all exceed the threshold
        emask = np.zeros(tree.n_leaves, dtype=bool)
        emask[tree.leaf_pos_of_node[leaves[exceed]]] = True
        csum = np.concatenate([[0], np.cumsum(emask)])
        sub = np.arange(lo, hi)
        full = (csum[tree.leaf_hi[sub]] - csum[tree.leaf_lo[sub]]) == (
            tree.leaf_hi[sub] - tree.leaf_lo[sub]
        )
        full[0] = False  # p itself cannot be full: its tail is at most half
        parent_full = np.zeros(hi - lo, dtype=bool)
        parent_full[1:] = full[tree.parent[sub[1:]] - lo]
        maximal = sub[full & ~parent_full]

        for q in maximal:
            if abs_sums[q] == 0.0:
                # nothing left to dominate under a cell where f vanishes
                continue
            carry_q = float(child_carry[q]) if child_carry is not None else 0.0
            stack.append((int(q), carry_q, depth + 1))

    constant = max(1.0, 2.0 * max_kappa)
    return DominationResult(
        sparse=SparseCollection(tree, frozenset(members)),
        constant=constant,
        levels=levels,
        recursion_depth=max_depth,
        node_count=len(members),
    )


def dominate(eps: SignSequence, f: CellFunction, base: int | str = 0) -> DominationResult:
    """Build a sparse majorant for the transform of f on the base cell.

    The returned constant is an upper bound derived from the recursion's
    thresholds (each stopping cell contributes at most twice its threshold,
    measured in units of the local mean of |f|); ``verify_domination``
    recomputes the exact pointwise constant independently.
    """
    _require_same_tree(eps, f)
    t = f.tree
    q0 = _resolve_base(f, base)
    avgs = t.node_averages(f.values)
    inc = _difference_increments(t, eps.eps, avgs)
    # carry for a stopping cell Q: its parent's multiplier times the mean of
    # f on Q (the half of the parent difference that stays with Q's subtree)
    carry = np.zeros(t.n_nodes)
    nodes = np.arange(1, t.n_nodes)
    carry[nodes] = eps.eps[t.parent[nodes]] * avgs[nodes]
    return _dominate_core(t, f, q0, inc, carry)


def dominate_truncation(
    eps: SignSequence, f: CellFunction, base: int | str = 0
) -> DominationResult:
    """Sparse majorant for the maximal truncation; same recursion as
    ``dominate`` (the control function already dominates every partial sum),
    verified against the truncation instead of the transform."""
    return dominate(eps, f, base)


def dominate_paraproduct(
    b: CarlesonFamily, f: CellFunction, base: int | str = 0
) -> DominationResult:
    """Sparse majorant for the paraproduct built from a normalized family.

    The chain partial sums of the paraproduct play the role the truncation
    plays for transforms; no scalar carry is needed because the coefficient
    functions are bounded by one in sup norm, so the parent term is absorbed
    by the threshold directly.
    """
    _require_same_tree(b, f)
    t = f.tree
    q0 = _resolve_base(f, base)
    avgs = t.node_averages(f.values)
    inc = b.increments(avgs)
    return _dominate_core(t, f, q0, inc, None)


def verify_domination(
    lhs: CellFunction, S: SparseCollection, f: CellFunction, base: int | str = 0
) -> VerifyReport:
    """Pointwise check of lhs <= C * (sparse sum of |f|) on the base cell.

    Returns the exact constant needed (0/0 counts as 0); fails when the
    sparse sum vanishes somewhere the left side does not.
    """
    t = f.tree
    q0 = t.node(base) if isinstance(base, str) else int(base)
    avgs = t.node_averages(np.abs(f.values))
    rhs = np.zeros(t.n_leaves)
    for mem in S.members:
        rhs[t.leaf_slice(mem)] += avgs[mem]
    sl = t.leaf_slice(q0)
    lv = np.abs(lhs.values[sl])
    rv = rhs[sl]

    bad = (lv > 0) & (rv == 0)
    if np.any(bad):
        pos = int(np.nonzero(bad)[0][0]) + sl.start
        return VerifyReport(ok=False, C_needed=float("inf"), worst_leaf=t.leaf_ids[pos])

    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(lv > 0, lv / np.where(rv > 0, rv, 1.0), 0.0)
    if ratio.size == 0 or ratio.max() == 0:
        return VerifyReport(ok=True, C_needed=0.0, worst_leaf=None)
    worst = int(np.argmax(ratio))
    return VerifyReport(
        ok=True, C_needed=float(ratio[worst]), worst_leaf=t.leaf_ids[worst + sl.start]
    )
