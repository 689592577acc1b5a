import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracspde.analysis import choose_gamma
from fracspde.errors import BindingError, ConditionViolation, ConvergenceError, DomainError
from fracspde.grid import GridSpec
from fracspde.kernels import ModelParams, build_green_table
from fracspde.noise import LevyMeasureSpec, sample_noise, sigma_linear, sigma_power, sigma_zero, validate_conditions
from fracspde.solver import (deterministic_part, mild_residual, picard_solve, simulate_ensemble, simulate_path,
                             weighted_norm)

HEAT = ModelParams(2.0, 1.0)
GRID = GridSpec(1, 8.0, 128, 1.0, 16)
MU = LevyMeasureSpec.discrete([[0.5], [-0.5]], [1.0, 1.0])


@pytest.fixture(scope="module")
def table():
    return build_green_table(HEAT, GRID)


def test_constant_data_is_preserved(table):
    for k in (0, 3, GRID.nt):
        np.testing.assert_allclose(deterministic_part(2.5, table, k), 2.5, atol=1e-12)


def test_time_zero_returns_initial_data(table):
    u0 = np.cos(GRID.axis)
    np.testing.assert_array_equal(deterministic_part(u0, table, 0), u0)


def test_sine_mode_decays_at_heat_rate(table):
    k1 = 2 * math.pi / GRID.length
    u0 = np.sin(k1 * GRID.axis)
    for k in (1, 8, 16):
        expected = math.exp(-k1 ** 2 * k * GRID.dt) * u0
        assert np.max(np.abs(deterministic_part(u0, table, k) - expected)) <= 1e-4


def test_deterministic_part_grid_mismatch(table):
    with pytest.raises(DomainError):
        deterministic_part(np.zeros(64), table, 1)


def test_zero_sigma_path_is_deterministic(table):
    u0 = 1 + 0.5 * np.cos(GRID.axis)
    path = simulate_path(HEAT, GRID, u0, sigma_zero(), MU, seed=3, table=table)
    det = np.array([deterministic_part(u0, table, k) for k in range(GRID.nt + 1)])
    np.testing.assert_array_equal(path.values, det)
    np.testing.assert_array_equal(path.values[0], u0)


def test_empty_noise_path_is_deterministic(table):
    mu0 = LevyMeasureSpec.discrete([[0.5]], [0.0])
    path = simulate_path(HEAT, GRID, 1.0, sigma_linear(), mu0, seed=3, table=table, override=True)
    np.testing.assert_allclose(path.values, 1.0, atol=1e-12)


def test_path_values_finite(table):
    path = simulate_path(HEAT, GRID, 1.0, sigma_linear(), MU, seed=5, table=table)
    assert not path.exploded and np.all(np.isfinite(path.values))


def test_explosion_is_flagged(table):
    mu = LevyMeasureSpec.discrete([[3.0], [-3.0]], [40.0, 40.0])
    path = simulate_path(HEAT, GRID, 5.0, sigma_power(scale=5.0, rho=3.0), mu, "noncompensated", seed=1,
                         table=table, override=True)
    assert path.exploded and path.explosion_time is not None
    k = int(round(path.explosion_time / GRID.dt))
    assert np.all(np.isnan(path.values[k:]))


def test_condition_violation_without_override(table):
    with pytest.raises(ConditionViolation):
        simulate_path(HEAT, GRID, 1.0, sigma_power(), MU, seed=1, table=table)


def test_compensated_ensemble_mean_matches_deterministic_part(table):
    u0 = 1 + 0.5 * np.cos(math.pi * GRID.axis / GRID.half_width)
    ens = simulate_ensemble(HEAT, GRID, u0, sigma_linear(), MU, seed=9, replicas=2000, table=table)
    det = np.array([deterministic_part(u0, table, k) for k in range(GRID.nt + 1)])
    spatial = ens.values.mean(axis=2)
    se = spatial.std(axis=0, ddof=1) / math.sqrt(len(ens))
    gap = np.abs(spatial.mean(axis=0) - det.mean(axis=1))
    assert np.all(gap[1:] <= 3 * se[1:])


def test_ensemble_replica_matches_single_path(table):
    ens = simulate_ensemble(HEAT, GRID, 1.0, sigma_linear(), MU, seed=4, replicas=10, table=table, batch_size=4)
    path = simulate_path(HEAT, GRID, 1.0, sigma_linear(), MU, noise=sample_noise(GRID, MU, 4, 7), table=table)
    np.testing.assert_array_equal(ens.values[7], path.values)


def test_ensemble_independent_of_workers(table):
    a = simulate_ensemble(HEAT, GRID, 1.0, sigma_linear(), MU, seed=2, replicas=40, table=table,
                          batch_size=8, workers=1)
    b = simulate_ensemble(HEAT, GRID, 1.0, sigma_linear(), MU, seed=2, replicas=40, table=table,
                          batch_size=8, workers=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_thread_cap_env(monkeypatch):
    from fracspde.solver import worker_count
    monkeypatch.setenv("FRACSPDE_THREADS", "3")
    assert worker_count() <= 3
    monkeypatch.setenv("FRACSPDE_THREADS", "x")
    with pytest.raises(DomainError):
        worker_count()


def test_picard_zero_sigma_one_iteration(table):
    noise = sample_noise(GRID, MU, 1)
    path, diag = picard_solve(HEAT, GRID, 1.0, sigma_zero(), MU, noise, gamma=1.0, table=table)
    assert diag.iterations == 1 and diag.converged
    np.testing.assert_allclose(path.values, 1.0, atol=1e-12)


def test_picard_contracts_and_solves_mild_equation(table):
    # many small jumps keep the sample second moments in the norm close to their expectation
    mu = LevyMeasureSpec.discrete([[0.25], [-0.25]], [8.0, 8.0])
    rep = validate_conditions(sigma_linear(), mu)
    gamma = choose_gamma(HEAT, rep.K2, 1.0, 0.25, form="derived")
    noises = [sample_noise(GRID, mu, 0, r) for r in range(200)]
    ens, diag = picard_solve(HEAT, GRID, 1.0, sigma_linear(), mu, noises, gamma, tol=1e-10, table=table)
    assert diag.converged
    assert max(diag.ratios) <= 0.30
    assert diag.residual <= 2e-10


def test_picard_fixed_point_matches_marching(table):
    noise = sample_noise(GRID, MU, 8)
    path, diag = picard_solve(HEAT, GRID, 1.0, sigma_linear(), MU, noise, gamma=20.0, tol=1e-12, table=table)
    marched = simulate_path(HEAT, GRID, 1.0, sigma_linear(), MU, noise=noise, table=table)
    np.testing.assert_allclose(path.values, marched.values, atol=1e-9)
    assert mild_residual(path, 1.0, table, sigma_linear(), MU, noise, 20.0) <= 1e-9


def test_picard_nonconvergence_carries_history(table):
    noise = sample_noise(GRID, MU, 8)
    with pytest.raises(ConvergenceError) as exc:
        picard_solve(HEAT, GRID, 1.0, sigma_linear(), MU, noise, gamma=1.0, max_iter=2, table=table)
    assert len(exc.value.history.differences) == 2


def test_picard_rejects_foreign_noise(table):
    other = GridSpec(1, 8.0, 128, 2.0, 16)
    with pytest.raises(BindingError):
        picard_solve(HEAT, GRID, 1.0, sigma_linear(), MU, sample_noise(other, MU, 1), 1.0, table=table)


def test_weighted_norm_trivial_cases():
    t = np.linspace(0, 1, 5)
    assert weighted_norm((np.zeros((5, 8)), t), 1.0) == 0.0
    assert weighted_norm((np.full((5, 8), 3.0), t), 2.5) == pytest.approx(3.0)


@settings(max_examples=30, deadline=None)
@given(g1=st.floats(0.01, 10.0), g2=st.floats(0.01, 10.0), seed=st.integers(0, 1000))
def test_weighted_norm_monotone_in_gamma(g1, g2, seed):
    vals = np.random.default_rng(seed).normal(size=(6, 4))
    t = np.linspace(0, 2, 6)
    lo, hi = sorted((g1, g2))
    assert weighted_norm((vals, t), lo) >= weighted_norm((vals, t), hi)
