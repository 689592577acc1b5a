import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from fracspde.errors import DomainError
from fracspde.specfun import (inv_subordinator_density, mittag_leffler, ml_asymptotic_coefficients,
                              stable_density)

mp.mp.dps = 40


def ml_mp(beta, z):
    """High-precision power series; converges for every z."""
    return float(mp.nsum(lambda k: mp.mpf(z) ** k / mp.gamma(beta * k + 1), [0, mp.inf]))


def g_half(u):
    return u ** -1.5 * np.exp(-1.0 / (4.0 * u)) / (2.0 * math.sqrt(math.pi))


def test_ml_at_zero_is_one():
    assert mittag_leffler(0.7, 0.0) == 1.0


def test_ml_beta_one_is_exponential():
    x = np.linspace(0.0, 30.0, 301)
    assert np.max(np.abs(mittag_leffler(1.0, -x) - np.exp(-x))) <= 1e-12


def test_ml_half_reference_value():
    assert mittag_leffler(0.5, -1.0) == pytest.approx(0.42758357615, abs=1e-10)


def test_ml_half_matches_erfcx():
    x = np.linspace(0.0, 5.0, 201)
    assert np.max(np.abs(mittag_leffler(0.5, -x) - special.erfcx(x))) <= 1e-8


@pytest.mark.parametrize("beta", [0.3, 0.6, 0.9])
@pytest.mark.parametrize("z", [-0.2, -1.0, -3.0, -8.0, -20.0])
def test_ml_against_high_precision_series(beta, z):
    assert mittag_leffler(beta, z) == pytest.approx(ml_mp(beta, z), rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("beta", [0.995, 0.999, 1.0 - 1e-6, 1.0 - 1e-12, 0.9999999999999999])
@pytest.mark.parametrize("z", [-1.01, -3.0, -12.0, -30.0])
def test_ml_order_near_one(beta, z):
    assert mittag_leffler(beta, z) == pytest.approx(ml_mp(beta, z), rel=1e-9, abs=1e-13)


def test_ml_order_near_one_continuous_across_routes():
    z = np.array([-2.0, -7.0])
    below = mittag_leffler(0.99 - 1e-13, z)
    above = mittag_leffler(0.99 + 1e-13, z)
    assert np.max(np.abs(below - above)) <= 1e-12


def test_ml_asymptotic_tail():
    beta, x = 0.6, 200.0
    c = ml_asymptotic_coefficients(beta, 4)
    approx = sum(c[k] * x ** -(k + 1) for k in range(4))
    assert mittag_leffler(beta, -x) == pytest.approx(approx, rel=1e-6)


@pytest.mark.parametrize("beta, z", [(0.5, 0.1), (1.2, -1.0), (0.0, -1.0)])
def test_ml_domain_errors(beta, z):
    with pytest.raises(DomainError):
        mittag_leffler(beta, z)


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(0.1, 1.0), a=st.floats(0.0, 40.0), b=st.floats(0.0, 40.0))
def test_ml_monotone_decreasing(beta, a, b):
    lo, hi = sorted((a, b))
    assert mittag_leffler(beta, -hi) <= mittag_leffler(beta, -lo) + 1e-13


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(0.1, 1.0), x=st.floats(0.0, 100.0))
def test_ml_in_unit_interval(beta, x):
    v = mittag_leffler(beta, -x)
    assert 0.0 < v <= 1.0


def test_stable_density_vanishes_on_negative_axis():
    assert stable_density(0.5, -2.0) == 0.0


def test_stable_density_half_closed_form():
    u = np.array([0.05, 0.3, 1.0, 4.0, 50.0, 1e4])
    assert stable_density(0.5, 1.0) == pytest.approx(0.21969564473, abs=1e-10)
    np.testing.assert_allclose(stable_density(0.5, u), g_half(u), rtol=1e-8)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.9])
def test_stable_density_normalised(beta):
    total = sum(integrate.quad(lambda u: stable_density(beta, u), a, b, limit=200)[0]
                for a, b in [(0, 0.5), (0.5, 2), (2, 20), (20, np.inf)])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_stable_density_beta_one_rejected():
    with pytest.raises(DomainError):
        stable_density(1.0, 1.0)


def test_inv_subordinator_reference():
    assert inv_subordinator_density(0.5, 1.0, 1.0) == pytest.approx(0.43939128946, abs=1e-10)


def test_inv_subordinator_scaling():
    x = np.linspace(0.1, 4.0, 20)
    beta, t = 0.6, 2.0
    lhs = inv_subordinator_density(beta, t, x)
    rhs = t ** -beta * inv_subordinator_density(beta, 1.0, x * t ** -beta)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13)


@pytest.mark.parametrize("beta", [0.5, 0.8])
@pytest.mark.parametrize("t", [0.5, 2.0])
def test_inv_subordinator_normalised(beta, t):
    total, _ = integrate.quad(lambda x: inv_subordinator_density(beta, t, x), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("beta, t, lam", [(0.5, 1.0, 1.0), (0.8, 0.5, 3.0), (0.3, 2.0, 0.5)])
def test_inv_subordinator_laplace_transform(beta, t, lam):
    val, _ = integrate.quad(lambda s: math.exp(-lam * s) * inv_subordinator_density(beta, t, s), 0, np.inf,
                            limit=200)
    assert val == pytest.approx(mittag_leffler(beta, -lam * t ** beta), abs=1e-6)


@pytest.mark.parametrize("t, x", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -1.0)])
def test_inv_subordinator_domain(t, x):
    with pytest.raises(DomainError):
        inv_subordinator_density(0.5, t, x)
