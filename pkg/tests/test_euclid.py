"""Grids, covering, kernels, lattice truncations, lattice domination."""

import math
from fractions import Fraction as F

import numpy as np
import pytest

from sparsedom.euclid import (
    DEFAULT_PSI,
    CutoffPsi,
    DiniKernel,
    GridCube,
    Lattice,
    ShiftedGridFamily,
    adapted_maximal,
    adapted_truncation,
    check_sparse_cubes,
    cover_cube,
    dini_check,
    dominate_euclid,
    hilbert_kernel,
    lipschitz_kernel,
    truncated_apply,
)


class TestGrids:
    def test_scale_partition(self):
        # fixed-scale cubes of each grid tile an interval exactly
        fam = ShiftedGridFamily(1)
        for s in range(3):
            for j in range(-1, 4):
                r = fam.residue(j, s)
                cubes = [GridCube(j=j, u=(s,), left=(3 * m + r,)) for m in range(-2, 4)]
                for a, b in zip(cubes, cubes[1:]):
                    assert a.hi(0) == b.lo(0)  # consecutive cubes abut exactly

    def test_nesting_across_scales(self):
        fam = ShiftedGridFamily(1)
        for s in range(3):
            for j in range(0, 6):
                r = fam.residue(j, s)
                for m in range(-2, 3):
                    cube = GridCube(j=j, u=(s,), left=(3 * m + r,))
                    par = fam.parent(cube)
                    assert par.j == j - 1
                    assert par.contains_cube(cube)

    def test_cube_containing_point(self):
        fam = ShiftedGridFamily(2)
        cube = fam.cube_containing((1, 2), 3, (F(1, 3), F(5, 7)))
        assert cube.lo(0) <= F(1, 3) < cube.hi(0)
        assert cube.lo(1) <= F(5, 7) < cube.hi(1)


class TestCoverCube:
    def test_dyadic_box_is_its_own_cover(self):
        q = cover_cube((F(0),), F(1, 2))
        assert q.u == (0,) and q.side == F(1, 2) and q.lo(0) == 0

    def test_worked_interval(self):
        q = cover_cube((F(3, 10),), F(3, 10))
        assert q.contains_box((F(3, 10),), F(3, 10))
        assert q.side <= 6 * F(3, 10)
        # deterministic: smallest qualifying scale, smallest shift
        assert (q.j, q.u, q.left) == (1, (2,), (1,))
        assert (q.lo(0), q.hi(0)) == (F(1, 6), F(2, 3))

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_random_boxes_exact(self, d):
        fam = ShiftedGridFamily(d)
        rng = np.random.default_rng(100 + d)
        for _ in range(3000):
            lo = tuple(F(int(n), 2**20) for n in rng.integers(0, 2**20, size=d))
            side = F(int(rng.integers(1, 2**15)), 2**20)
            q = cover_cube(lo, side, fam)
            assert q.contains_box(lo, side)
            assert q.side <= 6 * side

    def test_large_and_tiny_boxes(self):
        for side in (F(64), F(1, 2**18), F(7, 3)):
            q = cover_cube((F(-5, 7),), side)
            assert q.contains_box((F(-5, 7),), side)
            assert q.side <= 6 * side


class TestCutoff:
    def test_sandwich(self):
        psi = CutoffPsi()
        u = np.linspace(-2, 2, 4001)
        v = psi.one_dim(u)
        assert np.all(v >= 0) and np.all(v <= 1)
        assert np.all(v[np.abs(u) <= 0.5] == 1.0)
        assert np.all(v[np.abs(u) >= 1.0] == 0.0)
        # continuity across the ramp
        assert np.max(np.abs(np.diff(v))) < 4e-3

    def test_tensor_product(self):
        psi = CutoffPsi()
        z1 = np.array([0.25, 0.75])
        z2 = np.array([0.6, 0.1])
        assert np.allclose(psi.tensor(z1, z2), psi.one_dim(z1) * psi.one_dim(z2))


class TestDini:
    def test_linear_modulus(self):
        rep = dini_check(lambda t: np.asarray(t))
        assert rep.convergent
        assert rep.value == pytest.approx(1.0, abs=1e-3)

    def test_sqrt_modulus(self):
        rep = dini_check(lambda t: np.sqrt(t))
        assert rep.convergent
        assert rep.value == pytest.approx(2.0, abs=1e-3)

    def test_log_modulus_flagged(self):
        rep = dini_check(lambda t: 1.0 / np.log(np.exp(2.0) / np.asarray(t)))
        assert not rep.convergent

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError):
            dini_check(lambda t: np.sin(50.0 * np.asarray(t)) + 1.0)


class TestKernels:
    def test_hilbert_size_and_smoothness(self):
        K = hilbert_kernel()
        rng = np.random.default_rng(0)
        assert K.check_size(rng) <= 1.0 + 1e-12
        assert K.check_smoothness(rng) <= 1.05
        assert K.dini.convergent

    def test_lipschitz_size_and_smoothness(self):
        K = lipschitz_kernel()
        rng = np.random.default_rng(1)
        assert K.check_size(rng) <= 0.5 + 1e-12
        assert K.check_smoothness(rng) <= 1.05
        assert K.dini.convergent


class TestTruncatedApply:
    def test_zero_function(self):
        lat = Lattice(d=1, k=6)
        K = hilbert_kernel()
        out = truncated_apply(K, np.zeros(lat.shape), F(1, 8), F(1, 2), lat)
        assert np.allclose(out, 0.0)

    def test_empty_annulus(self):
        lat = Lattice(d=1, k=8)
        K = hilbert_kernel()
        f = np.zeros(lat.shape)
        f[0] = 1.0  # support far from the probe annulus of cells near 1
        s, t = F(1, 16), F(1, 8)
        out = truncated_apply(K, f, s, t, lat)
        # at cells further than t from the support the annulus misses it
        x = lat.centers()
        far = x > float(t) + x[0] + 2 * lat.hf
        assert np.allclose(out[far], 0.0)

    def test_brute_force_quadrature(self):
        lat = Lattice(d=1, k=7)
        K = hilbert_kernel()
        rng = np.random.default_rng(2)
        f = rng.standard_normal(lat.shape)
        s, t = F(3, 64), F(5, 16)
        fast = truncated_apply(K, f, s, t, lat)
        x = lat.centers()
        brute = np.zeros_like(f)
        for i in range(lat.n):
            acc = 0.0
            for jj in range(lat.n):
                if jj == i:
                    continue
                z = x[i] - x[jj]
                br = DEFAULT_PSI.one_dim(np.array([z / float(t)]))[0] - DEFAULT_PSI.one_dim(
                    np.array([z / float(s)])
                )[0]
                acc += (1.0 / z) * br * f[jj]
            brute[i] = acc * lat.cell_measure
        assert np.allclose(fast, brute, atol=1e-12)

    def test_radius_validation(self):
        lat = Lattice(d=1, k=6)
        K = hilbert_kernel()
        f = np.zeros(lat.shape)
        with pytest.raises(ValueError):
            truncated_apply(K, f, F(1, 4), F(1, 8), lat)  # s >= t
        with pytest.raises(ValueError):
            truncated_apply(K, f, F(1, 128), F(1, 4), lat)  # below resolution floor

    def test_d2_runs(self):
        lat = Lattice(d=2, k=4)

        def profile(z1, z2):
            r2 = z1**2 + z2**2
            safe = np.where(r2 > 0, r2, 1.0)
            return np.where(r2 > 0, z1 / safe, 0.0)

        K = DiniKernel(d=2, modulus=lambda t: np.minimum(4.0 * np.asarray(t), 0.98),
                       profile=profile, name="riesz-like")
        rng = np.random.default_rng(3)
        f = rng.standard_normal(lat.shape)
        out = truncated_apply(K, f, F(1, 8), F(1, 4), lat)
        assert out.shape == lat.shape
        assert np.all(np.isfinite(out))


class TestAdapted:
    def test_maximal_constant_sandwich(self):
        lat = Lattice(d=1, k=8)
        cube = GridCube(j=1, u=(0,), left=(0,))  # [0, 1/2)
        out = adapted_maximal(np.ones(lat.shape), cube, lat)
        w0, w1 = lat.cell_window(F(3, 16), F(5, 16))  # deep interior
        assert np.all(out[w0:w1] >= 1.0 - 1e-9)   # cutoff mass at least one
        assert np.all(out[w0:w1] <= 2.0 + 1e-9)   # at most the double window
        # zero outside the cube
        o0, o1 = lat.cell_window(F(1, 2), F(1))
        assert np.allclose(out[o0:o1], 0.0)

    def test_maximal_boundary_cells_zero(self):
        lat = Lattice(d=1, k=8)
        cube = GridCube(j=1, u=(0,), left=(0,))
        out = adapted_maximal(np.ones(lat.shape), cube, lat)
        assert out[0] == 0.0  # no admissible radius at the boundary cell

    def test_maximal_matches_brute_force(self):
        lat = Lattice(d=1, k=6)
        rng = np.random.default_rng(4)
        f = rng.standard_normal(lat.shape)
        cube = GridCube(j=0, u=(0,), left=(0,))
        got = adapted_maximal(f, cube, lat)
        x = lat.centers()
        psi = DEFAULT_PSI
        for i in range(lat.n):
            dist = min(x[i], 1.0 - x[i])
            best = 0.0
            for j in range(0, lat.k + 1):
                t = 2.0**-j
                if t >= dist:
                    continue
                vals = psi.one_dim((x[i] - x) / t)
                best = max(best, float(np.dot(vals, np.abs(f))) * lat.cell_measure / t)
            assert got[i] == pytest.approx(best, abs=1e-12)

    def test_truncation_zero_near_boundary(self):
        lat = Lattice(d=1, k=10)
        K = hilbert_kernel()
        rng = np.random.default_rng(5)
        f = rng.standard_normal(lat.shape)
        cube = GridCube(j=0, u=(0,), left=(0,))
        out = adapted_truncation(K, f, cube, lat)
        x = lat.centers()
        narrow = np.minimum(x, 1.0 - x) < 24 * lat.hf
        assert np.allclose(out[narrow], 0.0)

    def test_truncation_monotone_exactly(self):
        lat = Lattice(d=1, k=10)
        K = hilbert_kernel()
        rng = np.random.default_rng(6)
        f = rng.standard_normal(lat.shape)
        fam = ShiftedGridFamily(1)
        small = GridCube(j=3, u=(0,), left=(6,))   # [1/4, 3/8)
        for big in (fam.parent(small), GridCube(j=0, u=(0,), left=(0,))):
            ts = adapted_truncation(K, f, small, lat)
            tb = adapted_truncation(K, f, big, lat)
            assert np.all(ts <= tb)

    def test_truncation_pair_sup_matches_direct(self):
        # the spread over the cutoff table equals the direct sup over pairs
        lat = Lattice(d=1, k=8)
        K = hilbert_kernel()
        rng = np.random.default_rng(7)
        f = rng.standard_normal(lat.shape)
        cube = GridCube(j=0, u=(0,), left=(0,))
        got = adapted_truncation(K, f, cube, lat)
        x = lat.centers()
        scales = [F(2) ** (-j) for j in range(-2, lat.k)]
        for i in range(0, lat.n, 7):
            dist = min(x[i], 1.0 - x[i])
            adm = sorted(t for t in scales if 12 * float(t) < dist)
            best = 0.0
            for a in range(len(adm)):
                for b in range(a + 1, len(adm)):
                    v = truncated_apply(K, f, adm[a], adm[b], lat)[i]
                    best = max(best, abs(float(v)))
            assert got[i] == pytest.approx(best, abs=1e-10)


class TestSparseCubes:
    def test_chain_packing(self):
        fam = ShiftedGridFamily(1)
        chain = [GridCube(j=j, u=(0,), left=(0,)) for j in range(5)]
        rep = check_sparse_cubes(chain)
        assert rep.valid
        assert rep.worst_ratio == pytest.approx(0.5)

    def test_violation_detected(self):
        cubes = [
            GridCube(j=0, u=(0,), left=(0,)),
            GridCube(j=1, u=(0,), left=(0,)),
            GridCube(j=1, u=(0,), left=(3,)),
        ]
        rep = check_sparse_cubes(cubes)
        assert not rep.valid
        assert rep.worst_ratio == pytest.approx(1.0)
        assert rep.witness == cubes[0]


class TestDominateEuclid:
    def test_zero_function(self):
        lat = Lattice(d=1, k=8)
        K = hilbert_kernel()
        res = dominate_euclid(K, np.zeros(lat.shape), lat.domain_cube(), lat)
        assert res.verify_ok
        assert res.constant == 0.0

    def test_indicator_certified(self):
        lat = Lattice(d=1, k=10)
        K = hilbert_kernel()
        f = np.zeros(lat.shape)
        a, b = lat.cell_window(F(1, 4), F(1, 2))
        f[a:b] = 1.0
        res = dominate_euclid(K, f, lat.domain_cube(), lat)
        assert res.verify_ok
        assert math.isfinite(res.constant) and res.constant > 0
        for u, cubes in res.collections.items():
            assert check_sparse_cubes(cubes).valid

    def test_loose_budget_recursion_is_nontrivial(self):
        lat = Lattice(d=1, k=10)
        K = hilbert_kernel()
        rng = np.random.default_rng(8)
        f = np.zeros(lat.shape)
        f[lat.n // 4 : lat.n // 2] = rng.standard_normal(lat.n // 4)
        f[lat.n // 3] += 60.0
        res = dominate_euclid(K, f, lat.domain_cube(), lat, cover_fraction=F(1, 4))
        assert res.verify_ok
        assert res.n_members > 1
        assert res.recursion_rounds > 1
        for u, cubes in res.collections.items():
            assert check_sparse_cubes(cubes).valid

    def test_support_validation(self):
        lat = Lattice(d=1, k=8)
        K = hilbert_kernel()
        f = np.ones(lat.shape)
        small = GridCube(j=2, u=(0,), left=(3,))
        with pytest.raises(ValueError):
            dominate_euclid(K, f, small, lat)

    def test_too_coarse_resolution_is_reported(self):
        lat = Lattice(d=1, k=7)
        K = hilbert_kernel()
        f = np.zeros(lat.shape)
        base = GridCube(j=2, u=(0,), left=(3,))  # side 1/4: no pair fits at k=7
        a, b = lat.cell_window(base.lo(0), base.hi(0))
        f[a:b] = 1.0
        with pytest.warns(RuntimeWarning, match="too coarse"):
            res = dominate_euclid(K, f, base, lat)
        assert not res.resolution_ok

    def test_small_base_gets_ancestors_and_exterior(self):
        lat = Lattice(d=1, k=10)
        K = hilbert_kernel()
        f = np.zeros(lat.shape)
        a, b = lat.cell_window(F(5, 16), F(7, 16))
        f[a:b] = 1.0
        base = GridCube(j=2, u=(0,), left=(3,))  # [1/4, 1/2) contains support
        res = dominate_euclid(K, f, base, lat)
        assert res.verify_ok
        sides = [q.side for q in res.all_members()]
        assert max(sides) > base.side  # ancestor covers present
        assert res.exterior_constant > 0
        for u, cubes in res.collections.items():
            assert check_sparse_cubes(cubes).valid
