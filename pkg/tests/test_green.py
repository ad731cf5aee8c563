from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dgff.errors import DomainError, PrecisionError, SizeError
from dgff.green import (
    coarse_covariance,
    coarse_covariance_limit,
    coarse_increment_constant,
    green_entries,
    green_from_potential,
    green_function,
    green_tensor,
    harmonic_measure,
    potential_kernel,
    potential_kernel_asymptotic,
)
from dgff.io import read_dgfg
from dgff.lattice import BoxSpec, SubBoxPartition

# G_16((8,8),(8,8)) and G_32((16,16),(16,16)) from a dense solve of (I - P)
G16_CENTER = 2.354269037290656
G32_CENTER = 2.821061486273693


def fourier_potential(x, y):
    """Independent oracle: a(x) = (2 pi)^-2 int (1 - cos(x.t)) / (1 - (cos t1 + cos t2)/2) dt."""
    def f(t2, t1):
        den = 1.0 - 0.5 * (math.cos(t1) + math.cos(t2))
        if den < 1e-300:
            return 0.0
        return (1.0 - math.cos(x * t1) * math.cos(y * t2)) / den
    # the sin*sin part is odd and integrates to zero; the rest is even in each angle
    val, _ = integrate.dblquad(f, 0, math.pi, 0, math.pi, epsabs=1e-11, epsrel=1e-11)
    return 4 * val / (4 * math.pi ** 2)


def dense_inverse_4x4():
    # interior of N=4 is a 4-cycle; G has eigen-decomposition over {2, 0, 0, -2}/4
    return {"diag": 7 / 6, "adjacent": 1 / 3, "opposite": 1 / 6}


class TestPotentialKernel:
    def test_small_values(self):
        a = potential_kernel(5)
        assert a(0, 0) == 0
        assert a(1, 0) == pytest.approx(1.0, abs=1e-15)
        assert a(1, 1) == pytest.approx(4 / math.pi, abs=1e-15)
        assert a(2, 0) == pytest.approx(4 - 8 / math.pi, abs=1e-14)
        assert a(2, 1) == pytest.approx(8 / math.pi - 1, abs=1e-14)
        assert a(2, 2) == pytest.approx(16 / (3 * math.pi), abs=1e-14)

    @pytest.mark.parametrize("x,y", [(1, 0), (1, 1), (3, 2), (5, 0)])
    def test_fourier_oracle(self, x, y):
        assert potential_kernel(6)(x, y) == pytest.approx(fourier_potential(x, y), abs=1e-7)

    def test_symmetries(self):
        a = potential_kernel(12)
        v = a.values
        assert np.array_equal(v, v.T)
        assert np.array_equal(v, v[::-1, :])
        assert np.array_equal(v, v[:, ::-1])

    def test_harmonicity(self):
        res = potential_kernel(50).harmonicity_residual()
        assert np.max(np.abs(res)) < 1e-10

    def test_asymptotic(self):
        R = 50
        a = potential_kernel(R)
        x, y = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
        r = np.hypot(x, y)
        far = r >= 10
        err = np.abs(a.values[far] - potential_kernel_asymptotic(r[far]))
        assert np.all(err <= 1 / r[far] ** 2)

    def test_radius_limits(self):
        with pytest.raises(DomainError):
            potential_kernel(0)
        with pytest.raises(PrecisionError):
            potential_kernel(10_000)
        with pytest.raises(DomainError):
            potential_kernel(3)(4, 0)

    def test_save(self, tmp_path):
        a = potential_kernel(4)
        a.save(tmp_path / "a.dgfg")
        arr, meta = read_dgfg(tmp_path / "a.dgfg")
        assert np.array_equal(arr, a.values) and meta["radius"] == 4


class TestGreen:
    def test_single_interior_point(self):
        G = green_function(BoxSpec(3, dyadic=False))
        assert G((1, 1), (1, 1)) == pytest.approx(1.0)

    def test_four_cycle(self):
        G = green_function(BoxSpec(4))
        ref = dense_inverse_4x4()
        assert G((1, 1), (1, 1)) == pytest.approx(ref["diag"])
        assert G((1, 1), (1, 2)) == pytest.approx(ref["adjacent"])
        assert G((1, 1), (2, 2)) == pytest.approx(ref["opposite"])

    def test_regression_fixtures(self):
        assert green_function(BoxSpec(16))((8, 8), (8, 8)) == pytest.approx(G16_CENTER, rel=1e-12)
        assert green_entries(32, [[16, 16]], [[16, 16]])[0, 0] == pytest.approx(G32_CENTER, rel=1e-12)

    def test_boundary_rows_zero(self):
        G = green_function(BoxSpec(8))
        ring = BoxSpec(8).boundary_mask().ravel()
        assert np.all(G.values[ring] == 0) and np.all(G.values[:, ring] == 0)

    def test_psd_symmetric(self):
        G = green_function(BoxSpec(16)).values
        assert np.array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() > -1e-12

    def test_size_budget(self):
        with pytest.raises(SizeError):
            green_function(BoxSpec(128))

    @pytest.mark.parametrize("N", [8, 16, 32])
    def test_three_routes_agree(self, N):
        box = BoxSpec(N)
        dense = green_function(box).values
        pts = box.points()
        spec = green_entries(N, pts, pts)
        rel = np.abs(spec - dense) / np.maximum(np.abs(dense), 1e-300)
        assert np.max(np.where(dense > 0, rel, np.abs(spec))) < 1e-8
        us = box.interior_points()[:: max(1, (N - 2) ** 2 // 20)]
        rows = green_from_potential(box, us).reshape(len(us), -1)
        idx = us[:, 0] * N + us[:, 1]
        ref = dense[idx]
        assert np.max(np.abs(rows - ref) / np.maximum(ref, 1e-300) * (ref > 0)) < 1e-8
        assert np.max(np.abs(rows[ref == 0])) < 1e-10

    def test_tensor_matches_entries(self):
        xs = np.array([0, 3, 7, 12])
        ys = np.array([1, 5, 14])
        T = green_tensor(16, xs, ys)
        pts = np.array([[x, y] for x in xs for y in ys])
        E = green_entries(16, pts, pts)
        assert np.allclose(T.reshape(12, 12), E, atol=1e-13)

    def test_variance_growth_slope(self):
        Ns = np.array([16, 32, 64])
        v = [green_entries(N, [[N // 2, N // 2]], [[N // 2, N // 2]])[0, 0] for N in Ns]
        slope = np.polyfit(np.log(Ns), v, 1)[0]
        assert abs(slope / (2 / math.pi) - 1) < 0.05

    def test_save(self, tmp_path):
        G = green_function(BoxSpec(4))
        G.save(tmp_path / "g.dgfg")
        arr, meta = read_dgfg(tmp_path / "g.dgfg")
        assert np.array_equal(arr, G.values) and meta["N"] == 4


class TestHarmonicMeasure:
    def test_three_by_three(self):
        hm = harmonic_measure(BoxSpec(3, dyadic=False), (1, 1))
        w = dict(zip(map(tuple, hm.points), hm.weights))
        for p in [(0, 1), (1, 0), (2, 1), (1, 2)]:
            assert w[p] == pytest.approx(0.25)
        for p in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert w[p] == 0

    def test_symmetry_and_normalization(self):
        box = BoxSpec(9, dyadic=False)
        hm = harmonic_measure(box, (4, 4))
        assert abs(hm.weights.sum() - 1) < 1e-12
        grid = np.zeros((9, 9))
        grid[hm.points[:, 0], hm.points[:, 1]] = hm.weights
        for g in (grid.T, grid[::-1], grid[:, ::-1]):
            assert np.allclose(g, grid, atol=1e-14)

    def test_adjacent_side(self):
        hm = harmonic_measure(BoxSpec(16), (1, 8))
        assert hm.side_weight("left") > 0.25
        assert hm.weights.min() >= 0

    def test_degenerate(self):
        hm = harmonic_measure(BoxSpec(8), (0, 3))
        assert hm.degenerate and hm.weights.sum() == 1

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 14), st.integers(1, 14))
    def test_sum_one(self, x, y):
        hm = harmonic_measure(BoxSpec(16), (x, y))
        assert abs(hm.weights.sum() - 1) < 1e-12 and hm.weights.min() >= 0


class TestCoarse:
    def test_different_subboxes(self):
        part = SubBoxPartition(BoxSpec(32), 2, 0.125)
        u, v = (8, 8), (24, 8)
        C = coarse_covariance(part, [u, v]).matrix
        assert C[0, 1] == pytest.approx(green_entries(32, [u], [v])[0, 0], abs=1e-14)

    def test_subbox_centre_two_dense_solves(self):
        part = SubBoxPartition(BoxSpec(32), 2, 0.125)
        c = (8, 8)
        C = coarse_covariance(part, [c]).matrix
        G32 = green_function(BoxSpec(32))(c, c)
        G16 = green_function(BoxSpec(16))(c, c)
        assert C[0, 0] == pytest.approx(G32 - G16, abs=1e-12)

    def test_psd_random_sites(self):
        part = SubBoxPartition(BoxSpec(32), 2, 0.125)
        mask = part.delta_mask()
        cand = np.argwhere(mask)
        rng = np.random.default_rng(3)
        sites = cand[rng.choice(len(cand), 8, replace=False)]
        C = coarse_covariance(part, sites).matrix
        assert np.linalg.eigvalsh(C).min() > -1e-12

    def test_outside_delta_interior(self):
        part = SubBoxPartition(BoxSpec(32), 2, 0.125)
        with pytest.raises(DomainError):
            coarse_covariance(part, [(1, 8)])

    def test_limit_refines(self):
        sites = np.array([[0.25, 0.25], [0.3, 0.2], [0.75, 0.25], [0.6, 0.8]])
        cc = coarse_covariance_limit(2, 0.125, sites)
        e1, e2 = cc.level_errors
        assert e2 < e1 / 2 and cc.error == e2
        assert np.linalg.eigvalsh(cc.matrix).min() > -1e-10

    def test_limit_continuity(self):
        base = np.array([0.25, 0.25])
        pts = np.array([base, base + [0.01, 0], base + [0, 0.01]])
        d = np.diag(coarse_covariance_limit(2, 0.125, pts, n_ref=256).matrix)
        assert np.max(np.abs(d - d[0])) < 0.02

    def test_limit_K1_vanishes(self):
        pts = np.array([[0.5, 0.5], [0.3, 0.6]])
        cc = coarse_covariance_limit(1, 0.125, pts, n_ref=256)
        assert np.max(np.abs(cc.matrix)) < 1e-12

    def test_limit_domain(self):
        with pytest.raises(DomainError):
            coarse_covariance_limit(2, 0.125, [[0.01, 0.25]])

    def test_increment_constant_stable(self):
        cs = []
        for N in (32, 64):
            part = SubBoxPartition(BoxSpec(N), 2, 0.125)
            s = N // 2
            lo = part.margin
            pairs = [((lo, lo), (lo + k, lo)) for k in range(1, s - 2 * lo)]
            pairs += [((s // 2, s // 2), (s // 2 + k, s // 2 + k)) for k in range(1, s // 2 - lo)]
            cs.append(coarse_increment_constant(part, pairs))
        assert 0.5 < cs[1] / cs[0] < 2.0
