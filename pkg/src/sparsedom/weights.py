"""Weights, joint characteristics, weighted operator norms, sharpness sweeps.

The p = 2 norm is computed essentially exactly: conjugating by the square
root of the weight turns the weighted problem into an unweighted singular
value problem, solved by power iteration on the normal operator.  For
general p only a lower bound is attempted, by duality-map ascent from many
random starts; every evaluated Rayleigh ratio is a genuine lower bound, so
the best one found is reported as such.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .operators import LinearOperatorHandle, SignSequence, transform_operator
from .tree import CellFunction, MeasureTree, TreeSpec, build_tree

__all__ = [
    "Weight",
    "ApReport",
    "SweepRow",
    "SweepResult",
    "dual_weight",
    "ap_characteristic",
    "weighted_norm_l2",
    "weighted_norm_lp",
    "power_weight_family",
    "sharpness_sweep",
    "make_sign_rule",
]


class Weight(CellFunction):
    """A cell function with strictly positive values."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if np.any(self.values <= 0.0):
            raise ValueError("weights must be strictly positive")


def dual_weight(w: Weight, p: float) -> Weight:
    """The conjugate weight w^(1/(1-p)); at p = 2 this is 1/w."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    return Weight(w.tree, w.values ** (1.0 / (1.0 - p)))


@dataclass
class ApReport:
    p: float
    joint_char: float
    char: float
    argmax_node: str


def ap_characteristic(w: Weight, sigma: Weight, p: float) -> ApReport:
    """Joint characteristic: sup over cells of <sigma>^(p-1) <w>.

    ``joint_char`` uses the supplied pair; ``char`` is the classical
    characteristic of w alone (sigma replaced by its conjugate), which is at
    least 1 by Jensen.  The sup is exact: every cell is enumerated.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    if w.tree is not sigma.tree:
        raise ValueError("weights live on different trees")
    t = w.tree
    w_avg = t.node_averages(w.values)
    s_avg = t.node_averages(sigma.values)
    vals = s_avg ** (p - 1.0) * w_avg
    arg = int(np.argmax(vals))
    joint = float(vals[arg])

    d_avg = t.node_averages(w.values ** (1.0 / (1.0 - p)))
    char = float(np.max(d_avg ** (p - 1.0) * w_avg))
    return ApReport(p=p, joint_char=joint, char=char, argmax_node=t.ids[arg])


# ---------------------------------------------------------------------------
# weighted operator norms
# ---------------------------------------------------------------------------

def _mu_norm(t: MeasureTree, v: np.ndarray) -> float:
    return float(np.sqrt(np.dot(v * v, t.leaf_measure)))


def weighted_norm_l2(
    op: LinearOperatorHandle,
    w: Weight,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> float:
    """Operator norm on L2(w) via power iteration on the normal operator.

    The operator is conjugated to g -> sqrt(w) op(g / sqrt(w)), whose largest
    singular value over L2(mu) equals the weighted norm.  Non-convergence at
    the iteration cap yields a RuntimeWarning and the current (lower-bound)
    estimate rather than a silent value.
    """
    if op.tree is not w.tree:
        raise ValueError("operator and weight live on different trees")
    t = op.tree
    sw = np.sqrt(w.values)

    def B(v: np.ndarray) -> np.ndarray:
        return sw * op.apply(v / sw)

    def Bt(v: np.ndarray) -> np.ndarray:
        return op.adjoint(sw * v) / sw

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(t.n_leaves)
    nv = _mu_norm(t, v)
    if nv == 0:
        return 0.0
    v /= nv
    sigma = 0.0
    for _ in range(max_iter):
        y = B(v)
        z = Bt(y)
        lam = float(np.dot(v * z, t.leaf_measure))  # Rayleigh quotient of B'B
        new_sigma = math.sqrt(max(lam, 0.0))
        nz = _mu_norm(t, z)
        if nz == 0.0:
            return 0.0
        v = z / nz
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-300):
            return new_sigma
        sigma = new_sigma
    warnings.warn(
        f"power iteration did not reach tol={tol} in {max_iter} iterations; "
        f"returning the current lower-bound estimate {sigma:.6g}",
        RuntimeWarning,
    )
    return sigma


def _phi(v: np.ndarray, q: float) -> np.ndarray:
    """Duality map |v|^(q-1) sign(v)."""
    return np.sign(v) * np.abs(v) ** (q - 1.0)


def weighted_norm_lp(
    op: LinearOperatorHandle,
    w: Weight,
    p: float,
    starts: int = 32,
    max_iter: int = 200,
    tol: float = 1e-7,
    seed: int = 0,
) -> float:
    """Lower bound for the Lp(w) operator norm from ascent over test functions.

    Works on the conjugated operator g -> w^(1/p) op(g w^(-1/p)) so that the
    target is an unweighted p -> p norm; each iteration maps the current
    iterate through the operator, the p-duality map, the adjoint and the
    dual duality map, which is the classical ascent scheme for matrix p-norms
    and reduces to power iteration at p = 2.  The best Rayleigh ratio seen
    over all starts is returned; it is a certified lower bound by evaluation.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    if op.tree is not w.tree:
        raise ValueError("operator and weight live on different trees")
    t = op.tree
    mu = t.leaf_measure
    wp = w.values ** (1.0 / p)
    q = p / (p - 1.0)

    def B(v: np.ndarray) -> np.ndarray:
        return wp * op.apply(v / wp)

    def Bt(v: np.ndarray) -> np.ndarray:
        return op.adjoint(wp * v) / wp

    def pnorm(v: np.ndarray, r: float) -> float:
        return float(np.dot(np.abs(v) ** r, mu) ** (1.0 / r))

    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(starts):
        x = rng.standard_normal(t.n_leaves)
        nx = pnorm(x, p)
        if nx == 0:
            continue
        x /= nx
        prev = -1.0
        for _ in range(max_iter):
            y = B(x)
            ratio = pnorm(y, p)
            best = max(best, ratio)
            if ratio == 0.0 or abs(ratio - prev) <= tol * max(ratio, 1e-300):
                break
            prev = ratio
            # mu-weighted duality maps keep the pairing consistent
            u = Bt(_phi(y, p))
            x = _phi(u, q)
            nx = pnorm(x, p)
            if nx == 0.0:
                break
            x /= nx
    return best


# ---------------------------------------------------------------------------
# power weights and the sharpness sweep
# ---------------------------------------------------------------------------

def power_weight_family(
    alpha_grid: list[float], depth: int, p: float
) -> list[tuple[Weight, Weight]]:
    """Midpoint-sampled power weights on the dyadic model of [0, 1).

    Leaf k of 2^depth carries w = ((k + 1/2) 2^(-depth))^alpha, and sigma is
    the conjugate weight; midpoint sampling keeps every value finite and
    positive for any alpha.
    """
    if len(alpha_grid) == 0:
        raise ValueError("alpha grid must be nonempty")
    if p <= 1:
        raise ValueError("p must exceed 1")
    tree = build_tree(TreeSpec(kind="uniform", depth=depth, branching=2))
    n = 2**depth
    mid = (np.arange(n) + 0.5) / n
    out = []
    for alpha in alpha_grid:
        w = Weight(tree, mid ** float(alpha))
        out.append((w, dual_weight(w, p)))
    return out


@dataclass
class SweepRow:
    alpha: float
    depth: int
    ap_char: float
    norm: float
    ratio: float
    argmax_node: str


@dataclass
class SweepResult:
    rows: list[SweepRow]
    slope: float
    max_ratio: float
    p: float
    eps_rule: str
    critical_slope: float = float("nan")


def make_sign_rule(rule: str, tree: MeasureTree, rng: np.random.Generator) -> SignSequence:
    if rule == "all-ones":
        return SignSequence.constant(tree, 1.0)
    if rule == "alternating":
        return SignSequence.alternating(tree)
    if rule == "random":
        return SignSequence.random_signs(tree, rng)
    raise ValueError(f"unknown sign rule {rule!r} (use all-ones|alternating|random)")


def sharpness_sweep(
    depths: list[int],
    alphas: list[float],
    eps_rule: str = "alternating",
    p: float = 2.0,
    seed: int = 0,
    norm_seed: int = 0,
) -> SweepResult:
    """Norm-versus-characteristic table over the power weight family.

    For each (alpha, depth) cell: build the dyadic power weight, apply the
    chosen sign rule, compute the joint characteristic and the weighted norm
    (exact conjugated iteration at p = 2, ascent lower bound otherwise), and
    report norm / char^min(1, 1/(p-1)).  The slope of log norm against log
    characteristic is fitted by least squares over the top half of the alpha
    grid, where the characteristic dominates the unweighted constant.
    """
    if not depths or not alphas:
        raise ValueError("depth and alpha grids must be nonempty")
    expo = min(1.0, 1.0 / (p - 1.0))
    rng = np.random.default_rng(seed)
    rows: list[SweepRow] = []
    for depth in depths:
        pairs = power_weight_family(list(alphas), depth, p)
        tree = pairs[0][0].tree
        eps = make_sign_rule(eps_rule, tree, rng)
        op = transform_operator(eps)
        for alpha, (w, sigma) in zip(alphas, pairs):
            rep = ap_characteristic(w, sigma, p)
            if p == 2.0:
                nrm = weighted_norm_l2(op, w, seed=norm_seed)
            else:
                nrm = weighted_norm_lp(op, w, p, seed=norm_seed)
            rows.append(
                SweepRow(
                    alpha=float(alpha),
                    depth=int(depth),
                    ap_char=rep.joint_char,
                    norm=nrm,
                    ratio=nrm / rep.joint_char**expo,
                    argmax_node=rep.argmax_node,
                )
            )
    slope = fit_slope(rows, alphas)
    max_ratio = max(r.ratio for r in rows)
    return SweepResult(
        rows=rows,
        slope=slope,
        max_ratio=max_ratio,
        p=p,
        eps_rule=eps_rule,
        critical_slope=critical_slope(rows, alphas),
    )


def _ls_slope(pairs: list[tuple[float, float]]) -> float:
    xs = [x for x, _ in pairs]
    ys = [y for _, y in pairs]
    if len(xs) < 2 or max(xs) == min(xs):
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])


def fit_slope(rows: list[SweepRow], alphas: list[float]) -> float:
    """Least-squares slope of log norm vs log characteristic on the rows
    whose alpha lies in the top half of the grid."""
    srt = sorted(alphas)
    top = set(srt[len(srt) // 2 :])
    return _ls_slope(
        [(math.log(r.ap_char), math.log(r.norm)) for r in rows if r.alpha in top and r.norm > 0]
    )


def critical_slope(rows: list[SweepRow], alphas: list[float]) -> float:
    """Depth-direction slope along the family's extremal column.

    Power weights stay jointly integrable in the continuum only up to the
    critical exponent: beyond it the conjugate weight's mass collapses onto
    one boundary cell on a finite tree and the characteristic inflates as a
    discretization artifact that no operator norm can track linearly.  The
    asymptotic exponent is therefore read off the largest sub-critical
    column, where the characteristic grows with depth for genuine reasons.
    """
    sub = [a for a in alphas if a <= 1.0]
    if not sub:
        return float("nan")
    a_star = max(sub)
    return _ls_slope(
        [
            (math.log(r.ap_char), math.log(r.norm))
            for r in rows
            if r.alpha == a_star and r.norm > 0
        ]
    )
