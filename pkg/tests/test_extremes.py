from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dgff.config import TAIL_RATE
from dgff.errors import DomainError, StatisticsError
from dgff.extremes import (
    EmpiricalLaw,
    calibrate_prefactor_shift,
    centering,
    distance,
    ks_distance,
    levy_distance,
    max_ensemble,
    max_usable_z,
    perturbation_check,
    synthetic_tail_samples,
    tail_fit,
)
from dgff.io import sidecar_path

M512 = 8.859403382535975

samples_st = st.lists(st.floats(-5, 5, allow_nan=False).map(lambda x: round(x, 2)), min_size=1, max_size=12)


def levy_oracle(a, b, tol=1e-10):
    """Bisection on the defining inequalities, checked at every breakpoint."""
    a, b = np.sort(a), np.sort(b)

    def F(s, x):
        return np.searchsorted(s, x, side="right") / s.size

    def ok(e):
        for p, q in ((a, b), (b, a)):
            xs = np.concatenate([q, p - e - 1e-13, p - e])
            if np.any(F(q, xs) > F(p, xs + e) + e + 1e-12):
                return False
        return True

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


class TestCentering:
    def test_value_512(self):
        with mpmath.workdps(30):
            ref = 2 * mpmath.sqrt(2 / mpmath.pi) * (mpmath.log(512) - mpmath.mpf(3) / 8 * mpmath.log(mpmath.log(512)))
        assert centering(512) == pytest.approx(float(ref), abs=1e-13)
        assert centering(512) == pytest.approx(M512, abs=1e-13)

    def test_doubling_differences(self):
        d = [centering(2 ** (k + 1)) - centering(2 ** k) for k in range(7, 21)]
        lim = 2 * math.sqrt(2 / math.pi) * math.log(2)
        assert lim == pytest.approx(1.1061029, abs=1e-7)
        assert np.all(np.diff(d) > 0) and np.all(np.array(d) < lim)

    def test_increasing_and_domain(self):
        m = [centering(N) for N in range(16, 5000)]
        assert np.all(np.diff(m) > 0)
        for N in (0, 1, 2):
            with pytest.raises(DomainError):
                centering(N)


class TestEmpiricalLaw:
    def test_basic(self, tmp_path):
        law = EmpiricalLaw(np.array([3.0, 1.0, 2.0, 2.0]), {"N": 8})
        assert law.samples.tolist() == [1, 2, 2, 3]
        assert law.cdf(2.0) == 0.75 and law.cdf(1.999) == 0.25
        assert law.survival(2.0) == 0.75 and law.survival(2.001) == 0.25
        assert law.quantile(0.5) == 2.0 and law.quantile(1.0) == 3.0
        law.save(tmp_path / "l.csv")
        back = EmpiricalLaw.load(tmp_path / "l.csv")
        assert np.array_equal(back.samples, law.samples) and back.meta["N"] == 8
        assert law.shifted(1.0).samples.tolist() == [2, 3, 3, 4]
        with pytest.raises(StatisticsError):
            EmpiricalLaw(np.array([]))

    @settings(max_examples=200, deadline=None)
    @given(samples_st, st.floats(0.001, 1.0), st.floats(-6, 6))
    def test_cdf_quantile_consistency(self, xs, p, x):
        law = EmpiricalLaw(np.array(xs))
        q = law.quantile(p)
        assert law.cdf(q) >= p - 1e-12
        assert law.quantile(law.cdf(x)) <= x if law.cdf(x) > 0 else True
        grid = np.linspace(-6, 6, 50)
        assert np.all(np.diff(law.cdf(grid)) >= 0)
        assert np.all(np.diff(law.quantile(np.linspace(0.01, 1, 30))) >= 0)


class TestDistances:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=500)
        assert ks_distance(x, x) == 0 and levy_distance(x, x) == 0

    @pytest.mark.parametrize("h,expected", [(0.3, 0.3), (1.0, 1.0), (2.0, 1.0)])
    def test_point_masses(self, h, expected):
        assert levy_distance([0.0], [h]) == pytest.approx(expected)
        assert levy_oracle([0.0], [h]) == pytest.approx(expected, abs=1e-9)
        assert ks_distance([0.0], [h]) == 1.0

    def test_shifted_normals(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=400)
        assert levy_distance(a, a + 0.1) == pytest.approx(levy_oracle(a, a + 0.1), abs=1e-8)
        assert levy_distance(a, a + 0.1) <= 0.1 + 1e-12

    @settings(max_examples=150, deadline=None)
    @given(samples_st, samples_st)
    def test_levy_matches_definition(self, a, b):
        d = levy_distance(a, b)
        assert d == pytest.approx(levy_oracle(a, b), abs=1e-8)
        assert d <= ks_distance(a, b) + 1e-12
        assert d == pytest.approx(levy_distance(b, a), abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(samples_st, samples_st, samples_st)
    def test_triangle(self, a, b, c):
        for f in (levy_distance, ks_distance):
            assert f(a, c) <= f(a, b) + f(b, c) + 1e-12

    def test_dispatch(self):
        assert distance([0.0], [0.5], "levy") == pytest.approx(0.5)
        assert distance([0.0], [0.5], "KS") == 1.0
        with pytest.raises(ValueError):
            distance([0.0], [1.0], "wasserstein")


class TestTailFit:
    def test_synthetic_generator_exact(self):
        x = synthetic_tail_samples(100_000, 3)
        cdf = lambda t: 1 - (1 + t) * np.exp(-TAIL_RATE * t)
        assert x.min() >= 0 and stats.kstest(x, cdf).pvalue > 0.001

    def test_oracle_calibration(self):
        law = EmpiricalLaw(synthetic_tail_samples(1_000_000, 11))
        # log[(1 + z) e^{-rate z} / (z + 1)] is exactly linear, so the population optimum is 1
        shift, slope = calibrate_prefactor_shift(law)
        assert abs(shift - 1.0) <= 0.15 and abs(slope / -TAIL_RATE - 1) < 0.02
        fit = tail_fit(law, 1.0, 3.5, n_boot=50)
        assert abs(fit.slope / -TAIL_RATE - 1) < 0.02
        assert np.all(np.diff(fit.counts) <= 0)
        assert fit.z[1] - fit.z[0] == pytest.approx(0.25)
        # the plateau of (1 + z) e^{-rate z} is (1 + z)/z
        assert np.allclose(fit.plateau, (1 + fit.z) / fit.z, rtol=0.1)
        assert fit.alpha_star_ci[0] <= fit.alpha_star <= fit.alpha_star_ci[1]

    def test_errors(self):
        law = EmpiricalLaw(synthetic_tail_samples(10_000, 2))
        with pytest.raises(StatisticsError) as e:
            tail_fit(law, 10.0, 12.0)
        assert e.value.max_usable_z == pytest.approx(max_usable_z(law))
        with pytest.raises(StatisticsError):
            tail_fit(law, 1.0, 5.0)
        assert max_usable_z(EmpiricalLaw(np.ones(10))) == -np.inf

    def test_bootstrap_deterministic(self):
        law = EmpiricalLaw(synthetic_tail_samples(50_000, 5))
        a = tail_fit(law, 1, 2.5, seed=4)
        b = tail_fit(law, 1, 2.5, seed=4)
        assert a.slope_se == b.slope_se and a.slope_se > 0
        assert math.isnan(tail_fit(law, 1, 2.5, n_boot=0).slope_se)
        assert set(a.to_dict()) >= {"z", "counts", "slope", "slope_se", "plateau", "alpha_star"}


class TestEnsembles:
    def test_single_rep_point_mass(self):
        law, arg = max_ensemble("gff", 16, 1, 3)
        assert law.reps == 1 and law.iqr() == 0 and arg.reps == 1

    def test_worker_independence_and_reorder(self):
        a, pa = max_ensemble("mbrw", 16, 100, 9, workers=1)
        b, pb = max_ensemble("mbrw", 16, 100, 9, workers=3)
        assert a.samples.tobytes() == b.samples.tobytes() and np.array_equal(pa.points, pb.points)

    def test_raw_vs_centered(self):
        a, _ = max_ensemble("brw", 16, 40, 2, center=False)
        b, _ = max_ensemble("brw", 16, 40, 2)
        assert np.allclose(a.samples - centering(16), b.samples)
        assert b.meta["m_N"] == pytest.approx(centering(16))

    def test_tightness_two_seeds_and_argmax(self):
        la, aa = max_ensemble("gff", 64, 10_000, 101, workers=4)
        lb, _ = max_ensemble("gff", 64, 10_000, 102, workers=4)
        se = math.hypot(la.std(), lb.std()) / math.sqrt(10_000)
        assert abs(la.mean() - lb.mean()) < 3 * se
        uniform = 1 - 0.9 ** 2
        assert aa.boundary_fraction(0.05) < uniform
        dens = aa.density()
        assert np.all(dens >= 0) and dens.sum() / dens.size == pytest.approx(1.0)

    def test_region_restricts(self):
        mask = np.zeros((16, 16), bool)
        mask[4:8, 4:8] = True
        _, arg = max_ensemble("gff", 16, 50, 1, region=mask)
        assert np.all((arg.points >= 4 / 16) & (arg.points < 8 / 16))


def test_perturbation_check():
    rep = perturbation_check(32, [0.25, 1.0], 2000, master_seed=8)
    rows = {r["epsilon"]: r for r in rep["rows"]}
    assert rep["zero_at_zero"] and rows[0.0]["shift"] == 0.0
    assert rep["monotone"] and all(rows[e]["ok"] for e in rep["fit_eps"])
    assert math.isfinite(rows[1.0]["shift"])
    assert rows[1.0]["shift"] <= rep["C_all"] * 2 + 1e-12


@pytest.mark.slow
def test_perturbation_constant_uniform_in_N():
    cs = [perturbation_check(N, [0.25, 1.0], 2000, master_seed=8, workers=4)["C_all"] for N in (16, 32, 64)]
    assert all(0.8 <= b / a <= 1.25 for a, b in zip(cs, cs[1:]))
