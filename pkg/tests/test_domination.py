"""The stopping-time constructor and its independent verifier."""

import numpy as np
import pytest

from sparsedom.domination import (
    dominate,
    dominate_paraproduct,
    dominate_truncation,
    local_paraproduct,
    local_transform,
    local_truncation,
    verify_domination,
)
from sparsedom.operators import (
    CarlesonFamily,
    SignSequence,
    SparseCollection,
    check_sparse,
    maximal_truncation,
    transform,
)
from sparsedom.tree import CellFunction, TreeSpec, build_tree, random_tree


def unit_binary(depth):
    return build_tree(TreeSpec(kind="uniform", depth=depth, branching=2))


def random_signed_instance(rng, max_depth=8):
    t = random_tree(rng, max_depth=int(rng.integers(2, max_depth + 1)),
                    max_branching=4, stop_prob=0.15)
    f = CellFunction(t, rng.standard_normal(t.n_leaves))
    eps = SignSequence.random_signs(t, rng)
    return t, f, eps


class TestDominate:
    def test_constant_function(self):
        t = unit_binary(3)
        f = CellFunction(t, np.ones(t.n_leaves))
        res = dominate(SignSequence.random_signs(t, np.random.default_rng(0)), f, 0)
        assert res.sparse.members == frozenset({0})
        lhs = abs(local_transform(SignSequence.constant(t, 1.0), f, 0))
        rep = verify_domination(lhs, res.sparse, f, 0)
        assert rep.ok and rep.C_needed == 0.0  # no oscillation at all

    def test_zero_function_returns_root(self):
        t = unit_binary(2)
        f = CellFunction(t, np.zeros(4))
        res = dominate(SignSequence.constant(t, 1.0), f, 0)
        assert res.sparse.members == frozenset({0})
        assert res.constant > 0

    def test_single_leaf_support_descends_ancestor_chain(self):
        t = unit_binary(6)
        vals = np.zeros(t.n_leaves)
        vals[0] = 1.0
        f = CellFunction(t, vals)
        eps = SignSequence.constant(t, 1.0)
        res = dominate(eps, f, 0)
        # every member contains the supporting leaf, so members form a chain
        leaf = int(t.leaf_nodes[t.leaf_pos_of_node[t.leaf_nodes] == 0][0])
        chain = set(t.ancestors(leaf))
        assert res.sparse.members <= chain
        lhs = abs(local_transform(eps, f, 0))
        rep = verify_domination(lhs, res.sparse, f, 0)
        assert rep.ok and rep.C_needed <= res.constant + 1e-9

    def test_unsupported_function_rejected(self):
        t = unit_binary(2)
        f = CellFunction(t, np.ones(4))
        with pytest.raises(ValueError):
            dominate(SignSequence.constant(t, 1.0), f, t.node("r.0"))

    def test_random_suite_certifies(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            t, f, eps = random_signed_instance(rng)
            res = dominate(eps, f, 0)
            sparse_rep = check_sparse(res.sparse)
            assert sparse_rep.valid, sparse_rep
            lhs = abs(local_transform(eps, f, 0))
            rep = verify_domination(lhs, res.sparse, f, 0)
            assert rep.ok
            assert rep.C_needed <= res.constant + 1e-9

    def test_subroot_base_cell(self):
        t = unit_binary(4)
        base = t.node("r.1")
        vals = np.zeros(t.n_leaves)
        sl = t.leaf_slice(base)
        rng = np.random.default_rng(3)
        vals[sl] = rng.standard_normal(sl.stop - sl.start)
        f = CellFunction(t, vals)
        eps = SignSequence.random_signs(t, rng)
        res = dominate(eps, f, base)
        assert all(t.contains(base, m) for m in res.sparse.members)
        lhs = abs(local_transform(eps, f, base))
        rep = verify_domination(lhs, res.sparse, f, base)
        assert rep.ok and rep.C_needed <= res.constant + 1e-9

    def test_measure_decay_along_chains(self):
        rng = np.random.default_rng(7)
        t, f, eps = random_signed_instance(rng, max_depth=9)
        res = dominate(eps, f, 0)
        members = res.sparse.members
        for m in members:
            # nearest strict member ancestor must be at least twice as heavy
            p = int(t.parent[m])
            while p != -1 and p not in members:
                p = int(t.parent[p])
            if p != -1:
                assert t.measure[m] <= 0.5 * t.measure[p] * (1 + 1e-12)

    def test_sign_flip_linearity_and_reverify(self):
        rng = np.random.default_rng(11)
        t, f, eps = random_signed_instance(rng)
        neg = eps.negated()
        assert np.array_equal(
            transform(neg, f).values, -transform(eps, f).values
        )
        res = dominate(eps, f, 0)
        lhs_neg = abs(local_transform(neg, f, 0))
        rep = verify_domination(lhs_neg, res.sparse, f, 0)
        assert rep.ok  # |T(-eps) f| = |T(eps) f| is covered by the same collection

    def test_scale_invariance_of_needed_constant(self):
        rng = np.random.default_rng(13)
        t, f, eps = random_signed_instance(rng)
        res1 = dominate(eps, f, 0)
        rep1 = verify_domination(abs(local_transform(eps, f, 0)), res1.sparse, f, 0)
        g = 37.5 * f
        res2 = dominate(eps, g, 0)
        rep2 = verify_domination(abs(local_transform(eps, g, 0)), res2.sparse, g, 0)
        assert res1.sparse.members == res2.sparse.members
        assert rep2.C_needed == pytest.approx(rep1.C_needed, rel=1e-9)
        assert res2.constant == pytest.approx(res1.constant, rel=1e-9)

    def test_levels_recorded(self):
        rng = np.random.default_rng(17)
        t, f, eps = random_signed_instance(rng)
        res = dominate(eps, f, 0)
        assert set(res.levels) == {t.ids[m] for m in res.sparse.members}
        for ls in res.levels.values():
            assert ls.exceptional_fraction <= 0.5 + 1e-12


class TestDominateTruncation:
    def test_constant_function(self):
        t = unit_binary(3)
        f = CellFunction(t, np.ones(t.n_leaves))
        eps = SignSequence.constant(t, 1.0)
        res = dominate_truncation(eps, f, 0)
        assert res.sparse.members == frozenset({0})
        rep = verify_domination(local_truncation(eps, f, 0), res.sparse, f, 0)
        assert rep.ok and rep.C_needed == 0.0

    def test_single_difference_instance(self):
        t = unit_binary(4)
        # f lies in the difference space of one cell
        base = t.node("r.0")
        vals = np.zeros(t.n_leaves)
        sl0 = t.leaf_slice(t.node("r.0.0"))
        sl1 = t.leaf_slice(t.node("r.0.1"))
        vals[sl0] = 1.0
        vals[sl1] = -1.0
        f = CellFunction(t, vals)
        eps = SignSequence.constant(t, 1.0)
        res = dominate_truncation(eps, f, 0)
        rep = verify_domination(local_truncation(eps, f, 0), res.sparse, f, 0)
        assert rep.ok and rep.C_needed <= res.constant + 1e-9

    def test_random_suite_certifies(self):
        rng = np.random.default_rng(19)
        for _ in range(40):
            t, f, eps = random_signed_instance(rng)
            res = dominate_truncation(eps, f, 0)
            assert check_sparse(res.sparse).valid
            rep = verify_domination(local_truncation(eps, f, 0), res.sparse, f, 0)
            assert rep.ok
            assert rep.C_needed <= res.constant + 1e-9

    def test_truncation_at_root_matches_public_operator(self):
        rng = np.random.default_rng(23)
        t, f, eps = random_signed_instance(rng)
        assert np.allclose(
            local_truncation(eps, f, 0).values, maximal_truncation(eps, f).values, atol=0
        )


class TestDominateParaproduct:
    def test_random_suite_certifies(self):
        rng = np.random.default_rng(29)
        for _ in range(40):
            t = random_tree(rng, max_depth=int(rng.integers(2, 8)), max_branching=3,
                            stop_prob=0.15)
            fam = CarlesonFamily.random(t, rng)
            f = CellFunction(t, rng.standard_normal(t.n_leaves))
            res = dominate_paraproduct(fam, f, 0)
            assert check_sparse(res.sparse).valid
            lhs = abs(local_paraproduct(fam, f, 0))
            rep = verify_domination(lhs, res.sparse, f, 0)
            assert rep.ok
            assert rep.C_needed <= res.constant + 1e-9

    def test_zero_family(self):
        t = unit_binary(3)
        fam = CarlesonFamily(t, {})
        f = CellFunction(t, np.random.default_rng(0).standard_normal(t.n_leaves))
        res = dominate_paraproduct(fam, f, 0)
        rep = verify_domination(abs(local_paraproduct(fam, f, 0)), res.sparse, f, 0)
        assert rep.ok and rep.C_needed == 0.0


class TestVerify:
    def test_zero_lhs(self):
        t = unit_binary(2)
        f = CellFunction(t, np.array([1.0, 2.0, 3.0, 4.0]))
        S = SparseCollection.from_ids(t, ["r"])
        rep = verify_domination(CellFunction(t, np.zeros(4)), S, f, 0)
        assert rep.ok and rep.C_needed == 0.0 and rep.worst_leaf is None

    def test_ratio_one_when_equal(self):
        from sparsedom.operators import sparse_apply

        t = unit_binary(2)
        f = CellFunction(t, np.array([1.0, 2.0, 3.0, 4.0]))
        S = SparseCollection.from_ids(t, ["r", "r.0"])
        lhs = sparse_apply(S, abs(f))
        rep = verify_domination(lhs, S, f, 0)
        assert rep.ok
        assert rep.C_needed == pytest.approx(1.0)

    def test_uncovered_mass_fails(self):
        t = unit_binary(2)
        f = CellFunction(t, np.array([0.0, 0.0, 1.0, 1.0]))
        S = SparseCollection.from_ids(t, ["r.1"])  # covers only where f lives
        lhs = CellFunction(t, np.array([1.0, 0.0, 0.0, 0.0]))  # mass outside
        rep = verify_domination(lhs, S, f, 0)
        assert not rep.ok
        assert rep.worst_leaf == "r.0.0"
