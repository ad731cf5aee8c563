from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from dgff.barrier import (
    BarrierSpec,
    bent_barrier_density_mc,
    dominance_check,
    excess_ratio,
    familywise_z,
    monotone_likelihood_check,
    no_crossing_probability,
    reflection_density,
    reflection_mass,
    straight_barrier_mc,
)
from dgff.errors import ParameterError


def test_density_zero_at_barrier():
    assert reflection_density(BarrierSpec(1, 2), 2.0) == pytest.approx(0.0, abs=1e-300)


def test_density_formula_value():
    # terminal value 0 with y=2, t=1: (1 - e^{-8}) / sqrt(2 pi)
    assert reflection_density(BarrierSpec(1, 2), 0.0) == pytest.approx((1 - math.exp(-8)) / math.sqrt(2 * math.pi), rel=1e-14)


def test_density_above_barrier_flagged():
    val, flag = reflection_density(BarrierSpec(1, 2), np.array([1.0, 2.5]), return_flag=True)
    assert val[1] == 0 and flag.tolist() == [False, True]


@pytest.mark.parametrize("t,y,s2", [(1, 2, 1), (10, 3, 1), (100, 5, 2.0), (0.5, 0.1, 0.3)])
def test_quadrature_matches_closed_form(t, y, s2):
    spec = BarrierSpec(t, y, s2)
    val, _ = integrate.quad(lambda w: reflection_density(spec, w), -np.inf, y, epsabs=1e-12, epsrel=1e-12)
    closed = 1 - 2 * norm.sf(y / math.sqrt(s2 * t))
    assert abs(val - closed) < 1e-6
    assert no_crossing_probability(spec) == pytest.approx(closed, abs=1e-14)
    assert float(reflection_mass(spec, -np.inf, y)) == pytest.approx(closed, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.1, 10), st.floats(0.2, 5), st.floats(0.2, 4), st.floats(-20, 10))
def test_scaling_and_positivity(t, y, s2, c, w):
    base = BarrierSpec(t, y, s2)
    scaled = BarrierSpec(c * c * t, c * y, s2)
    assert reflection_density(base, w) >= 0
    assert reflection_density(scaled, c * w) == pytest.approx(reflection_density(base, w) / c, rel=1e-9, abs=1e-300)


def test_bent_requires_y_above_one():
    with pytest.raises(ParameterError):
        BarrierSpec(10, 0.5, bent=True)
    with pytest.raises(ParameterError):
        BarrierSpec(-1, 2)


def test_bent_level_shape():
    spec = BarrierSpec(100, 5, bent=True, C=10)
    assert spec.level(0.0) == pytest.approx(5 + 5 ** 0.05)
    assert spec.level(50.0) == pytest.approx(5 + 5 ** 0.05 + 10 * 50 ** 0.05)
    assert spec.level(30.0) == pytest.approx(spec.level(70.0))


def test_straight_mc_matches_closed_form():
    spec = BarrierSpec(10, 3, 1)
    rep = straight_barrier_mc(spec, 200_000, seed=3)
    assert abs(rep["estimate"] - rep["closed_form"]) < 4 * rep["se"]
    fine = straight_barrier_mc(spec, 50_000, seed=4, steps=16)
    assert abs(fine["estimate"] - fine["closed_form"]) < 4 * fine["se"]
    with pytest.raises(ParameterError):
        straight_barrier_mc(BarrierSpec(10, 3, bent=True), 10, 0)


def test_straight_mc_worker_independent():
    spec = BarrierSpec(10, 3, 1)
    a = straight_barrier_mc(spec, 120_000, seed=9, workers=1, chunk_size=30_000)
    b = straight_barrier_mc(spec, 120_000, seed=9, workers=3, chunk_size=30_000)
    assert a["estimate"] == b["estimate"]


def test_euler_point_value_against_formula():
    # straight barrier through the Euler histogram: bias is upward only
    spec = BarrierSpec(1, 2, 1)
    edges = np.array([-0.05, 0.05])
    rep = bent_barrier_density_mc(spec, edges, 200_000, 1e-3, seed=5)
    exact = reflection_mass(spec, -0.05, 0.05) / 0.1
    est, se = rep["estimate"][0], rep["se"][0]
    assert est > exact - 4 * se
    assert abs(est - (1 - math.exp(-8)) / math.sqrt(2 * math.pi)) < 4 * se + 5e-3


def test_bent_report_and_checks():
    spec = BarrierSpec(10, 2, bent=True, C=1)
    edges = np.linspace(-8, 2, 21)
    with pytest.warns(RuntimeWarning):
        rep = bent_barrier_density_mc(spec, edges, 100_000, 0.05, seed=6)
    assert rep["bias_warning"] and len(rep["estimate"]) == 20
    assert dominance_check(rep)["ok"]
    assert monotone_likelihood_check(rep)["ok"]
    ex, se = excess_ratio(rep)
    assert ex > 0 and se > 0
    with pytest.raises(ParameterError):
        bent_barrier_density_mc(spec, edges, 1000, 0.01, seed=6)


def test_familywise_threshold():
    assert familywise_z(1) == pytest.approx(norm.isf(0.01))
    assert familywise_z(100) == pytest.approx(norm.isf(1e-4))
    assert familywise_z(1, level=0.5) == 2.0
