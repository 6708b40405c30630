import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from gaussloc import bounds
from gaussloc.field import gaussian_spec
from gaussloc.geometry import reference_kappas

# Reference values below were computed independently with mpmath at 30 digits.


def test_energy_scale_reference():
    rep = bounds.energy_scales(1.0, 100.0, 0.4, 1, 1.0, E0=-2.0)
    assert rep.intermediates["E_sigma(L)"] == pytest.approx(65.19398729703667, rel=1e-13)
    assert rep.intermediates["sigma(L)"] == pytest.approx(0.0153388378508558257, rel=1e-13)
    assert rep.intermediates["v0(L)"] == pytest.approx(-74.3443358424347271, rel=1e-13)
    assert rep.value == pytest.approx(-65.19398729703667 - 1.0, rel=1e-13)


def test_wegner_constant_reference():
    spec = gaussian_spec(1)
    rep = bounds.wegner_constant(-1.0, 1.0, 1.0, 1, covariance=spec.scaled_cov)
    assert rep.value == pytest.approx(0.731147354487107, rel=1e-12)
    assert rep.intermediates["b_E"] == pytest.approx(math.exp(-0.125), rel=1e-12)


def test_combes_thomas_reference():
    assert bounds.combes_thomas_bound(0.0, -2.0, 5.0, 1.0, 1.0, 1).value == pytest.approx(
        2.2983714442257955e-05, rel=1e-12)
    assert bounds.combes_thomas_bound(1.0, -1.0, 3.0, 1.0, 1.0, 2).value == pytest.approx(
        4.37350528298671360e-4, rel=1e-12)


def test_fernique_rhs_reference():
    assert bounds.fernique_rhs(16.0, 5.0, 1.0, 1).value == pytest.approx(15.2946715374236537, rel=1e-13)


def test_pointwise_constant_reference():
    assert bounds.pointwise_constant(0.5, 8.0, 1, 4).value == pytest.approx(2.51859545753047745e23, rel=1e-12)


def test_fernique_regime_unit_gaussian():
    spec = gaussian_spec(1)
    hd = spec.holder
    rep = bounds.fernique_regime(1.0, hd.beta, hd.b, hd.theta)
    assert 15.0 < rep.value < 16.0


def test_bound_preconditions():
    with pytest.raises(bounds.BoundError):
        bounds.combes_thomas_bound(0.0, 1.0, 1.0, 1.0, 1.0, 1)
    with pytest.raises(bounds.BoundError):
        bounds.fernique_rhs(1.0, 1.0, 1.0, 1)
    with pytest.raises(bounds.BoundError):
        bounds.energy_scales(1.0, 0.5, 0.1, 1, 1.0)
    with pytest.raises(bounds.BoundError):
        bounds.wegner_constant(0.0, 1.0, 1.0, 1, b_E=0.0)


@given(st.floats(-20, 20), st.floats(0.2, 3.0), st.floats(0.05, 1.0))
def test_wegner_t_positive_root(E, c0, bE):
    """``t`` is the positive root of ``C_E t^2 + E t = 1/(2 pi)``."""
    C_E = c0 * (2 - bE**2)
    t = bounds.wegner_t(E, C_E)
    assert t > 0
    assert C_E * t * t + E * t == pytest.approx(1 / (2 * math.pi), rel=1e-9, abs=1e-12)


@given(st.floats(0.1, 5.0), st.floats(-5.0, 0.0), st.floats(0.5, 20.0))
def test_combes_thomas_decreases_with_distance(gap, v0, delta):
    E = v0 - gap
    a = bounds.combes_thomas_bound(v0, E, delta, 1.0, 1.0, 1).value
    b = bounds.combes_thomas_bound(v0, E, delta + 1.0, 1.0, 1.0, 1).value
    assert b < a


@given(st.floats(1.5, 1e4), st.floats(0.0, 50.0))
def test_fernique_rhs_monotone_in_threshold(ell, E):
    assert bounds.fernique_rhs(ell, E + 1.0, 1.0, 1).value <= bounds.fernique_rhs(ell, E, 1.0, 1).value


@given(st.floats(2.0, 1e6), st.floats(0.01, 2.0), st.integers(1, 3))
def test_energy_scales_ordering(L, rho, d):
    rep = bounds.energy_scales(1.0, L, rho, d, 1.0)
    it = rep.intermediates
    # v0(L) uses the larger exponent, so it sits below -E_sigma(L)
    assert it["v0(L)"] < -it["E_sigma(L)"]
    assert rep.value < -it["E_sigma(L)"]


@given(st.floats(0.5, 50.0), st.floats(-10.0, 10.0))
def test_phi_functional_monotone(b, s):
    k = reference_kappas(1)
    assume(s >= -10)
    assert bounds.phi_functional(b, s, k) <= bounds.phi_functional(b, s + 1.0, k)
    assert bounds.phi_functional(b, s, k) >= bounds.phi_functional(2 * b, s, k)


def test_wegner_asymptotic_limits_closed_form():
    lim = bounds.wegner_asymptotic_limits(2, 2.0)
    assert lim["high"] == pytest.approx(9 * math.exp(1 / (2 * math.pi)) / math.sqrt(4 * math.pi))
    assert lim["low"] == -0.25


def test_sphere_area():
    assert bounds.sphere_area(1) == pytest.approx(2.0)
    assert bounds.sphere_area(2) == pytest.approx(2 * math.pi)
    assert bounds.sphere_area(3) == pytest.approx(4 * math.pi)


def test_initial_estimate_bound_small_at_deep_energy():
    rep = bounds.initial_estimate_bound(50.0, 4, 1, -6.0, -2.0)
    assert rep.value < 50.0 ** -4.45
    assert np.isfinite(rep.intermediates["Phi"])
