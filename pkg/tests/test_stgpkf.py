import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from fieldlimits.errors import OffGridSensorInTruthMode, SingularInnovation
from fieldlimits.kernels import Domain, SpatialKernelSpec, SpatialOperators, build_grid, temporal_state_space, TemporalKernelSpec
from fieldlimits.stgpkf import (
    FilterState,
    MeasurementModel,
    build_measurement_model,
    discretize_process,
    field_covariance,
    field_variance,
    grid_indices,
    initial_state,
    kf_predict,
    kf_update,
    measurement_model_on_grid,
    project_field,
    simulate_measurements,
    simulate_truth,
)

REAL = temporal_state_space(TemporalKernelSpec())


def test_discretize_process_closed_form():
    pm = discretize_process(REAL, 0.05, 4)
    assert pm.phi0 == pytest.approx(math.exp(-1 / 1200), rel=1e-15)
    assert pm.qd0 == pytest.approx((1 - math.exp(-1 / 600)) * 30, rel=1e-13)
    numeric, _ = quad(lambda t: math.exp(2 * REAL.A0 * t), 0, 0.05)
    assert abs(pm.qd0 - numeric) < 1e-12


def test_discretize_process_limits_and_semigroup():
    tiny = discretize_process(REAL, 1e-10, 1)
    assert tiny.phi0 == pytest.approx(1.0) and tiny.qd0 == pytest.approx(0.0, abs=1e-9)
    one, two = discretize_process(REAL, 0.3, 1), discretize_process(REAL, 0.6, 1)
    assert two.phi0 == pytest.approx(one.phi0 ** 2, rel=1e-14)
    assert two.qd0 == pytest.approx(one.phi0 ** 2 * one.qd0 + one.qd0, rel=1e-13)
    with pytest.raises(ValueError):
        discretize_process(REAL, 0.0, 1)


def test_measurement_model_on_grid_matches_general():
    ops = SpatialOperators(build_grid(Domain(), 1.0), SpatialKernelSpec())
    idx = [0, 5, 17]
    gen = build_measurement_model(ops, ops.grid.points[idx], REAL.C0, 2.0)
    fast = measurement_model_on_grid(ops, idx, REAL.C0, 2.0)
    np.testing.assert_allclose(gen.H, fast.H, atol=1e-10)
    np.testing.assert_allclose(gen.V, fast.V, atol=1e-10)


def test_measurement_model_single_point():
    ops = SpatialOperators(build_grid(Domain.box(1.0), 1.0), SpatialKernelSpec(sigma_s=1.5))
    mm = build_measurement_model(ops, [[0.5, 0.5]], 0.7, 0.3)
    assert mm.H[0, 0] == pytest.approx(1.5 * 0.7)
    assert mm.V[0, 0] == pytest.approx(0.09)


def test_off_grid_sensor_adds_conditional_variance():
    ops = SpatialOperators(build_grid(Domain((0.0,), (2.0,)), 1.0), SpatialKernelSpec())
    mm = build_measurement_model(ops, [[1.0]], 1.0, 0.5)
    assert mm.V[0, 0] > 0.25


def test_kf_update_examples():
    s = FilterState(np.array([0.3]), np.array([[1.0]]))
    st1 = kf_update(s, MeasurementModel(np.array([[1.0]]), np.array([[1.0]]), np.zeros((1, 1))), [2.0])
    assert st1.Sigma[0, 0] == pytest.approx(0.5) and st1.mean[0] == pytest.approx(0.3 + 0.5 * 1.7)
    blind = kf_update(s, MeasurementModel(np.zeros((1, 1)), np.eye(1), np.zeros((1, 1))), [5.0])
    np.testing.assert_array_equal(blind.Sigma, s.Sigma)
    np.testing.assert_array_equal(blind.mean, s.mean)
    rng = np.random.default_rng(0)
    H = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    exact = kf_update(FilterState(np.zeros(3), np.eye(3)), MeasurementModel(H, 1e-12 * np.eye(3), np.zeros((3, 1))), np.ones(3))
    assert np.all(np.diag(exact.Sigma) <= 1e-8)
    with pytest.raises(SingularInnovation):
        kf_update(FilterState(np.zeros(2), np.zeros((2, 2))), MeasurementModel(np.ones((1, 2)), np.zeros((1, 1)), None), [0.0])


def test_kf_predict_examples():
    pm = discretize_process(REAL, 0.05, 3)
    zero = kf_predict(FilterState(np.zeros(3), np.zeros((3, 3))), pm)
    np.testing.assert_allclose(zero.Sigma, pm.Qd)
    np.testing.assert_array_equal(zero.mean, 0.0)
    stat = initial_state(pm)
    np.testing.assert_allclose(kf_predict(stat, pm).Sigma, stat.Sigma, rtol=1e-12)
    assert pm.stationary_variance == pytest.approx(30.0, rel=1e-12)


def test_project_field_examples():
    st0 = FilterState(np.zeros(2), np.eye(2))
    fe = project_field(st0, np.eye(2), 1.0)
    np.testing.assert_allclose(fe.Pi, np.eye(2))
    np.testing.assert_allclose(fe.clarity_per_point, 0.5)
    fe0 = project_field(FilterState(np.zeros(2), np.zeros((2, 2))), np.eye(2), 1.0)
    np.testing.assert_array_equal(fe0.clarity_per_point, 1.0)
    ops = SpatialOperators(build_grid(Domain(), 1.0), SpatialKernelSpec())
    pm = discretize_process(REAL, 0.05, ops.grid.count)
    prior = project_field(initial_state(pm), ops.sqrt, REAL.C0)
    np.testing.assert_allclose(np.diag(prior.Pi), 4.0, rtol=1e-10)
    np.testing.assert_allclose(field_variance(initial_state(pm).Sigma, ops.sqrt, REAL.C0), 4.0, rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.floats(0, 3), st.floats(0, 3), st.integers(0, 2 ** 32 - 1))
def test_field_congruence_linear_and_psd(n, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    R = X @ X.T
    S1, S2 = (Y @ Y.T for Y in rng.standard_normal((2, n, n)))
    T = lambda S: field_covariance(S, R, 0.8)
    np.testing.assert_allclose(T(alpha * S1 + beta * S2), alpha * T(S1) + beta * T(S2), atol=1e-9 * (1 + np.abs(T(S1)).max() + np.abs(T(S2)).max()))
    assert np.linalg.eigvalsh(T(S1))[0] >= -1e-9 * np.abs(T(S1)).max()


def test_filter_covariance_monotone_and_symmetric():
    ops = SpatialOperators(build_grid(Domain(), 1.0), SpatialKernelSpec())
    pm = discretize_process(REAL, 0.05, ops.grid.count)
    rng = np.random.default_rng(1)
    state = initial_state(pm)
    for _ in range(50):
        mm = measurement_model_on_grid(ops, rng.integers(0, ops.grid.count, 2), REAL.C0, 2.0)
        post = kf_update(state, mm, rng.standard_normal(2))
        assert np.trace(post.Sigma) <= np.trace(state.Sigma) + 1e-12
        assert np.linalg.norm(post.Sigma - post.Sigma.T) < 1e-10
        state = kf_predict(post, pm)


def test_innovation_whiteness():
    ops = SpatialOperators(build_grid(Domain(), 1.0), SpatialKernelSpec())
    pm = discretize_process(REAL, 0.05, ops.grid.count)
    rng = np.random.default_rng(4)
    steps, N_r = 4000, 2
    _, field = simulate_truth(pm, ops.sqrt, REAL.C0, steps, rng)
    state, nis = initial_state(pm), []
    for k in range(steps):
        idx = rng.integers(0, ops.grid.count, N_r)
        y = simulate_measurements(field[k], idx, 2.0, rng)
        state, e = kf_update(state, measurement_model_on_grid(ops, idx, REAL.C0, 2.0), y, return_nis=True)
        nis.append(e)
        state = kf_predict(state, pm)
    assert np.mean(nis[steps // 2:]) == pytest.approx(N_r, rel=0.1)


def test_simulate_truth_statistics():
    ops = SpatialOperators(build_grid(Domain(), 2.5), SpatialKernelSpec())
    pm = discretize_process(REAL, 1.0, ops.grid.count)
    _, f = simulate_truth(pm, ops.sqrt, REAL.C0, 20000, 0)
    assert np.var(f[:, 0]) == pytest.approx(4.0, rel=0.1)
    a, fa = simulate_truth(pm, ops.sqrt, REAL.C0, 10, 3)
    b, fb = simulate_truth(pm, ops.sqrt, REAL.C0, 10, 3)
    np.testing.assert_array_equal(fa, fb)
    quiet = discretize_process(REAL, 1.0, ops.grid.count).__class__(REAL, 1.0, ops.grid.count, pm.phi0, 0.0)
    _, fz = simulate_truth(quiet, ops.sqrt, REAL.C0, 10, 0, s0=np.zeros(ops.grid.count))
    np.testing.assert_array_equal(fz, 0.0)


def test_simulate_measurements():
    f = np.arange(5.0)
    np.testing.assert_array_equal(simulate_measurements(f, [1, 3], 0.0, 0), [1.0, 3.0])
    y = simulate_measurements(np.zeros(1), np.zeros(10000, dtype=int), 2.0, 1)
    assert np.var(y) == pytest.approx(4.0, rel=0.05)
    twin = simulate_measurements(f, [2, 2], 1.0, 2)
    assert twin[0] != twin[1]


def test_grid_indices_truth_mode():
    g = build_grid(Domain(), 1.0)
    np.testing.assert_array_equal(grid_indices(g, g.points[[4, 9]]), [4, 9])
    with pytest.raises(OffGridSensorInTruthMode):
        grid_indices(g, [[0.7, 0.5]])
    assert grid_indices(g, [[0.7, 0.5]], snap=True)[0] == 0
