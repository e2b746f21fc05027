"""Characteristics, weighted norms, power weights, sharpness sweeps."""

import math

import numpy as np
import pytest

from sparsedom.operators import (
    CarlesonFamily,
    SignSequence,
    SparseCollection,
    paraproduct_operator,
    sparse_operator,
    transform_operator,
)
from sparsedom.tree import TreeSpec, build_tree, random_tree
from sparsedom.weights import (
    Weight,
    ap_characteristic,
    dual_weight,
    power_weight_family,
    sharpness_sweep,
    weighted_norm_l2,
    weighted_norm_lp,
)


def unit_binary(depth):
    return build_tree(TreeSpec(kind="uniform", depth=depth, branching=2))


def dense_weighted_norm(op, w):
    """Independent singular value oracle: materialize the conjugated matrix
    on plain ell^2 and take the largest singular value."""
    t = op.tree
    n = t.n_leaves
    sw = np.sqrt(w.values)
    rt = np.sqrt(t.leaf_measure)
    M = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = rt * sw * op.apply((e / rt) / sw)
    return float(np.linalg.svd(M, compute_uv=False)[0])


class TestApCharacteristic:
    def test_unit_weights(self):
        t = unit_binary(3)
        one = Weight(t, np.ones(t.n_leaves))
        for p in (1.5, 2.0, 3.0):
            rep = ap_characteristic(one, one, p)
            assert rep.joint_char == pytest.approx(1.0)
            assert rep.char == pytest.approx(1.0)

    def test_constants_pass_through(self):
        t = unit_binary(3)
        w = Weight(t, np.full(t.n_leaves, 3.0))
        s = Weight(t, np.full(t.n_leaves, 5.0))
        for p in (1.5, 2.0, 4.0):
            rep = ap_characteristic(w, s, p)
            assert rep.joint_char == pytest.approx(3.0 * 5.0 ** (p - 1.0), rel=1e-12)

    def test_power_weight_against_enumeration(self):
        depth, p, alpha = 6, 2.0, 1.0
        (w, sigma) = power_weight_family([alpha], depth, p)[0]
        t = w.tree
        # independent sup over every cell with loop arithmetic
        best, arg = -1.0, None
        for i in range(t.n_nodes):
            sl = t.leaf_slice(i)
            mu = t.leaf_measure[sl]
            wa = float(np.dot(w.values[sl], mu)) / float(t.measure[i])
            sa = float(np.dot(sigma.values[sl], mu)) / float(t.measure[i])
            val = sa ** (p - 1.0) * wa
            if val > best:
                best, arg = val, t.ids[i]
        rep = ap_characteristic(w, sigma, p)
        assert rep.joint_char == pytest.approx(best, rel=1e-12)
        assert rep.argmax_node == arg

    def test_scaling_invariance(self):
        rng = np.random.default_rng(0)
        t = random_tree(rng, max_depth=6, max_branching=3)
        w = Weight(t, rng.uniform(0.1, 10.0, t.n_leaves))
        s = Weight(t, rng.uniform(0.1, 10.0, t.n_leaves))
        for p in (1.5, 2.0, 3.0):
            base = ap_characteristic(w, s, p).joint_char
            c = 7.25
            lhs = ap_characteristic(w, Weight(t, c * s.values), p).joint_char
            assert lhs == pytest.approx(c ** (p - 1.0) * base, rel=1e-12)
            lhs = ap_characteristic(Weight(t, c * w.values), s, p).joint_char
            assert lhs == pytest.approx(c * base, rel=1e-12)

    def test_char_at_least_one(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            t = random_tree(rng, max_depth=6, max_branching=3)
            w = Weight(t, np.exp(rng.standard_normal(t.n_leaves)))
            for p in (1.5, 2.0, 3.0):
                rep = ap_characteristic(w, dual_weight(w, p), p)
                assert rep.char >= 1.0 - 1e-12

    def test_bad_p_rejected(self):
        t = unit_binary(1)
        one = Weight(t, np.ones(2))
        with pytest.raises(ValueError):
            ap_characteristic(one, one, 1.0)

    def test_nonpositive_weight_rejected(self):
        t = unit_binary(1)
        with pytest.raises(ValueError):
            Weight(t, np.array([1.0, 0.0]))


class TestWeightedNormL2:
    def test_mean_free_projection_norm_one(self):
        t = unit_binary(5)
        op = transform_operator(SignSequence.constant(t, 1.0))
        one = Weight(t, np.ones(t.n_leaves))
        assert weighted_norm_l2(op, one) == pytest.approx(1.0, rel=1e-6)

    def test_zero_operator(self):
        t = unit_binary(4)
        op = transform_operator(SignSequence.constant(t, 0.0))
        one = Weight(t, np.ones(t.n_leaves))
        assert weighted_norm_l2(op, one) == pytest.approx(0.0, abs=1e-12)

    def test_single_difference_multiplier_norm_one(self):
        t = unit_binary(4)
        op = transform_operator(SignSequence.single(t, "r.0", 1.0))
        one = Weight(t, np.ones(t.n_leaves))
        got = weighted_norm_l2(op, one)
        assert got == pytest.approx(1.0, rel=1e-6)
        assert got == pytest.approx(dense_weighted_norm(op, one), rel=1e-6)

    def test_matches_dense_svd_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(6):
            t = random_tree(rng, max_depth=5, max_branching=3, stop_prob=0.2)
            w = Weight(t, np.exp(rng.standard_normal(t.n_leaves)))
            eps = SignSequence(t, rng.uniform(-1, 1, t.n_nodes))
            op = transform_operator(eps)
            assert weighted_norm_l2(op, w) == pytest.approx(
                dense_weighted_norm(op, w), rel=1e-5
            )

    def test_sparse_and_paraproduct_operators(self):
        rng = np.random.default_rng(3)
        t = random_tree(rng, max_depth=5, max_branching=3)
        w = Weight(t, np.exp(rng.standard_normal(t.n_leaves)))
        members = frozenset(int(i) for i in rng.choice(t.n_nodes, 8, replace=False))
        for op in (
            sparse_operator(SparseCollection(t, members)),
            paraproduct_operator(CarlesonFamily.random(t, rng)),
        ):
            assert weighted_norm_l2(op, w) == pytest.approx(
                dense_weighted_norm(op, w), rel=1e-5
            )

    def test_norm_dominates_test_function_ratios(self):
        rng = np.random.default_rng(4)
        t = random_tree(rng, max_depth=6, max_branching=3)
        w = Weight(t, np.exp(rng.standard_normal(t.n_leaves)))
        eps = SignSequence.random_signs(t, rng)
        op = transform_operator(eps)
        nrm = weighted_norm_l2(op, w)
        wm = w.values * t.leaf_measure
        for _ in range(100):
            g = rng.standard_normal(t.n_leaves)
            num = math.sqrt(float(np.dot(op.apply(g) ** 2, wm)))
            den = math.sqrt(float(np.dot(g**2, wm)))
            assert num <= nrm * den * (1 + 1e-6)

    def test_duality_under_inverse_weight(self):
        rng = np.random.default_rng(5)
        t = random_tree(rng, max_depth=6, max_branching=3)
        w = Weight(t, np.exp(rng.standard_normal(t.n_leaves)))
        eps = SignSequence(t, rng.uniform(-1, 1, t.n_nodes))
        op = transform_operator(eps)
        a = weighted_norm_l2(op, w)
        b = weighted_norm_l2(op, Weight(t, 1.0 / w.values))
        assert a == pytest.approx(b, abs=1e-6 * max(1.0, a))


class TestWeightedNormLp:
    def test_agrees_with_l2_at_p2(self):
        rng = np.random.default_rng(6)
        for _ in range(4):
            t = random_tree(rng, max_depth=5, max_branching=3)
            w = Weight(t, np.exp(0.5 * rng.standard_normal(t.n_leaves)))
            eps = SignSequence.random_signs(t, rng)
            op = transform_operator(eps)
            lp = weighted_norm_lp(op, w, 2.0, starts=8)
            l2 = weighted_norm_l2(op, w)
            assert lp == pytest.approx(l2, rel=0.02)
            assert lp <= l2 * (1 + 1e-6)  # always a lower bound

    def test_zero_operator(self):
        t = unit_binary(4)
        op = transform_operator(SignSequence.constant(t, 0.0))
        one = Weight(t, np.ones(t.n_leaves))
        assert weighted_norm_lp(op, one, 4.0, starts=4) == 0.0

    def test_projection_p4_bounded(self):
        t = unit_binary(5)
        op = transform_operator(SignSequence.constant(t, 1.0))
        one = Weight(t, np.ones(t.n_leaves))
        val = weighted_norm_lp(op, one, 4.0, starts=8)
        assert 0.0 < val <= 2.0 + 1e-9  # mean-free part has unweighted p-norm <= 2


class TestPowerWeights:
    def test_alpha_zero_is_unit(self):
        (w, s) = power_weight_family([0.0], 8, 2.0)[0]
        rep = ap_characteristic(w, s, 2.0)
        assert rep.joint_char == pytest.approx(1.0)

    def test_characteristics_increase_with_alpha(self):
        pairs = power_weight_family([0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5], 9, 2.0)
        chars = [ap_characteristic(w, s, 2.0).joint_char for (w, s) in pairs]
        assert all(b > a for a, b in zip(chars, chars[1:]))

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            power_weight_family([], 8, 2.0)


class TestSweep:
    def test_alpha_zero_rows_have_unit_characteristic(self):
        res = sharpness_sweep([8, 9], [0.0], "alternating", p=2.0)
        for row in res.rows:
            assert row.ap_char == pytest.approx(1.0)
            assert row.ratio == pytest.approx(row.norm)
            assert row.norm <= 1.0 + 1e-6

    def test_ratio_uses_min_exponent(self):
        res = sharpness_sweep([8], [1.0], "alternating", p=3.0)
        row = res.rows[0]
        expo = min(1.0, 1.0 / (3.0 - 1.0))
        assert row.ratio == pytest.approx(row.norm / row.ap_char**expo, rel=1e-12)

    def test_critical_column_slope_present(self):
        res = sharpness_sweep([8, 9, 10], [0.0, 0.5, 1.0, 1.5], "alternating", p=2.0)
        assert math.isfinite(res.slope)
        assert math.isfinite(res.critical_slope)
        assert res.critical_slope == pytest.approx(1.1, abs=0.15)

    def test_bad_rule_rejected(self):
        with pytest.raises(ValueError):
            sharpness_sweep([8], [0.5], "sometimes", p=2.0)
