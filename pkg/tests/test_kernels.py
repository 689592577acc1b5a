import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fracspde.errors import DomainError, IntegralDivergenceError, ResolutionError
from fracspde.grid import GridSpec
from fracspde.kernels import (ModelParams, build_green_table, c_star, green_function, green_l2_norm,
                              stable_transition_density, tail_mass_estimate)


def gauss(s, x, nu=1.0):
    return np.exp(-np.asarray(x) ** 2 / (4 * nu * s)) / math.sqrt(4 * math.pi * nu * s)


def test_params_reject_dimension_constraint():
    with pytest.raises(DomainError):
        ModelParams(1.0, 1.0, d=1)
    with pytest.raises(DomainError):
        ModelParams(2.5, 0.5)
    ModelParams(1.5, 0.5, d=1)


def test_transition_density_gaussian_and_cauchy():
    p2 = ModelParams(2.0, 1.0)
    assert stable_transition_density(p2, 1.0, 0.0) == pytest.approx(0.28209479177, abs=1e-10)
    p1 = ModelParams(1.0, 0.5)
    x = np.array([0.0, 0.5, 3.0, 30.0])
    np.testing.assert_allclose(stable_transition_density(p1, 1.0, x), 1 / (math.pi * (1 + x ** 2)), rtol=1e-8)


@settings(max_examples=25, deadline=None)
@given(alpha=st.sampled_from([0.8, 1.2, 1.7, 2.0]), s=st.floats(0.1, 5.0), x=st.floats(0.0, 10.0))
def test_transition_density_even(alpha, s, x):
    p = ModelParams(alpha, 0.3)
    assert stable_transition_density(p, s, x) == stable_transition_density(p, s, -x)


def test_transition_density_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        stable_transition_density(ModelParams(2.0, 1.0), 0.0, 0.0)


@pytest.mark.parametrize("method", ["subordination", "spectral"])
def test_green_beta_one_is_heat_kernel(method):
    p = ModelParams(2.0, 1.0)
    x = np.linspace(0.0, 5.0, 101)
    assert np.max(np.abs(green_function(p, 1.0, x, method=method) - gauss(1.0, x))) <= 1e-6
    assert green_function(p, 1.0, 0.5, method=method) == pytest.approx(0.26500353, abs=1e-8)


def test_green_methods_agree_at_origin():
    p = ModelParams(2.0, 0.5)
    a = green_function(p, 1.0, 0.0, method="subordination")
    b = green_function(p, 1.0, 0.0, method="spectral")
    assert abs(a - b) <= 1e-4


@pytest.mark.parametrize("alpha, beta", [(2.0, 0.5), (1.5, 0.9), (1.2, 0.5)])
def test_green_is_probability_density(alpha, beta):
    p = ModelParams(alpha, beta)
    v = np.linspace(-10.0, 14.0, 961)
    x = np.exp(v)
    total = 2 * integrate.trapezoid(green_function(p, 1.0, x) * x, v)
    assert total == pytest.approx(1.0, abs=1e-4)


def test_green_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        green_function(ModelParams(2.0, 0.5), 0.0, 1.0)


def test_green_l2_gaussian_closed_form():
    assert green_l2_norm(ModelParams(2.0, 1.0), 2.0) == pytest.approx(0.14104739589, abs=1e-10)


def test_green_l2_scaling_ratio():
    p = ModelParams(1.5, 0.5)
    ratio = green_l2_norm(p, 1.0) / green_l2_norm(p, 4.0)
    assert ratio == pytest.approx(4 ** (p.beta / p.alpha), rel=0.01)


def test_green_l2_scaling_and_c_star():
    p = ModelParams(1.5, 0.5)
    cs = c_star(p)
    for t in (0.5, 1.0, 2.0):
        assert green_l2_norm(p, t) * t ** (p.beta / p.alpha) == pytest.approx(cs, rel=0.01)


def test_c_star_gaussian():
    assert c_star(ModelParams(2.0, 1.0)) == pytest.approx((8 * math.pi) ** -0.5, abs=1e-10)


@pytest.mark.parametrize("alpha, beta", [(2.0, 0.5), (1.5, 0.9)])
def test_c_star_nu_scaling(alpha, beta):
    ratio = c_star(ModelParams(alpha, beta, nu=2.0)) / c_star(ModelParams(alpha, beta))
    assert ratio == pytest.approx(2 ** (-1 / alpha), rel=1e-9)


def test_c_star_two_dimensional():
    p = ModelParams(2.0, 0.9, d=2)
    assert c_star(p) == pytest.approx(green_l2_norm(p, 1.0), rel=0.01)


def test_tail_mass_small_far_out():
    p = ModelParams(2.0, 1.0)
    assert tail_mass_estimate(p, 1.0, 10.0) < 1e-10
    assert tail_mass_estimate(p, 1.0, 1.0) > tail_mass_estimate(p, 1.0, 3.0)


def wrapped_gauss(grid, s):
    x = grid.axis
    return sum(gauss(s, x + m * grid.length) for m in range(-20, 21))


def test_table_first_slice_is_wrapped_heat_kernel():
    grid = GridSpec(1, 8.0, 128, 1.0, 32)
    table = build_green_table(ModelParams(2.0, 1.0), grid)
    assert np.max(np.abs(table.centered(1) - wrapped_gauss(grid, grid.dt))) <= 1e-6


def test_table_mass_and_symmetry():
    grid = GridSpec(1, 10.0, 256, 1.0, 20, symbol_tol=1e-2)
    table = build_green_table(ModelParams(2.0, 0.9), grid)
    for k in range(1, grid.nt + 1):
        assert table.symbols[k].flat[0] == pytest.approx(1.0, abs=1e-12)
        assert table.mass(k) == pytest.approx(1.0, abs=1e-4)
        c = table.centered(k)
        np.testing.assert_array_equal(c[1:], c[1:][::-1])


def test_table_read_only():
    grid = GridSpec(1, 8.0, 128, 1.0, 8)
    table = build_green_table(ModelParams(2.0, 1.0), grid)
    with pytest.raises(ValueError):
        table.values[0, 0] = 1.0


def test_table_resolution_errors():
    with pytest.raises(ResolutionError) as exc:
        build_green_table(ModelParams(2.0, 1.0), GridSpec(1, 8.0, 32, 1.0, 32))
    assert exc.value.parameter == "grid.n"
    with pytest.raises(ResolutionError) as exc:
        build_green_table(ModelParams(2.0, 1.0), GridSpec(1, 2.0, 64, 4.0, 8))
    assert exc.value.parameter == "grid.half_width"


def test_two_dimensional_routes_agree():
    p = ModelParams(2.0, 0.9, d=2)
    pts = np.array([[0.3, 0.4], [1.0, 0.0], [0.0, 2.0]])
    a = green_function(p, 1.0, pts, method="subordination")
    b = green_function(p, 1.0, pts, method="spectral")
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_c_star_diverges_when_dimension_too_large():
    with pytest.raises((IntegralDivergenceError, DomainError)):
        c_star(ModelParams(0.9, 0.5, d=2))
