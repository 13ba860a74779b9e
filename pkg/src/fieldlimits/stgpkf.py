"""Spatiotemporal GP Kalman filter on a spatial grid.

Each grid point carries one latent Ornstein-Uhlenbeck state; the field on
the grid is ``f = sqrt(Kgg) C s`` with ``C = C0 I``. Process matrices are
block diagonal with identical blocks, so for the scalar realization they are
stored as two numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OffGridSensorInTruthMode, SingularInnovation
from .kernels import Grid, SpatialOperators, StateSpaceRealization, kernel_blocks
from .riccati import INNOVATION_COND_LIMIT, ContinuousSystem, DiscreteSystem
from .spd import symmetrize


@dataclass(frozen=True)
class ProcessModel:
    realization: StateSpaceRealization
    dt: float
    n_grid: int
    phi0: float
    qd0: float

    @property
    def Phi(self) -> np.ndarray:
        return self.phi0 * np.eye(self.n_grid)

    @property
    def Qd(self) -> np.ndarray:
        return self.qd0 * np.eye(self.n_grid)

    @property
    def stationary_variance(self) -> float:
        return self.qd0 / (1.0 - self.phi0 ** 2)

    def discrete_system(self) -> DiscreteSystem:
        return DiscreteSystem(self.Phi, self.Qd)

    def continuous_system(self) -> ContinuousSystem:
        r = self.realization
        return ContinuousSystem.isotropic(r.A0, r.q_c, self.n_grid)


def discretize_process(real: StateSpaceRealization, dt: float, Ng: int) -> ProcessModel:
    """Exact discretization of the scalar OU block, replicated over the grid."""
    if not dt > 0:
        raise ValueError(f"sampling period must be positive, got {dt}")
    a = real.A0
    phi0 = float(np.exp(a * dt))
    qd0 = float(real.B0 ** 2 * np.expm1(2.0 * a * dt) / (2.0 * a))
    return ProcessModel(real, float(dt), int(Ng), phi0, qd0)


@dataclass(frozen=True)
class MeasurementModel:
    H: np.ndarray
    V: np.ndarray
    sensor_locations: np.ndarray
    grid_indices: np.ndarray | None = None


def build_measurement_model(ops: SpatialOperators, sensors, C0: float, sigma_m: float) -> MeasurementModel:
    """Condition the joint GP over grid and sensor locations.

    ``H = Krg Kgg^-1 sqrt(Kgg) C`` and
    ``V = sigma_m^2 I + Krr - Krg Kgg^-1 Kgr``; sensors may sit anywhere in
    the domain.
    """
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    if sensors.shape[1] != ops.grid.domain.dim:
        raise DimensionMismatch(f"sensor locations have dim {sensors.shape[1]}, domain has {ops.grid.domain.dim}")
    Kgr, Krg, Krr = kernel_blocks(ops.grid, sensors, ops.spec)
    H = C0 * (Krg @ ops.inv_sqrt)
    V = sigma_m ** 2 * np.eye(len(sensors)) + symmetrize(Krr - Krg @ ops.solve(Kgr))
    return MeasurementModel(H=H, V=V, sensor_locations=sensors)


def measurement_model_on_grid(ops: SpatialOperators, indices, C0: float, sigma_m: float) -> MeasurementModel:
    """Measurement model for sensors sitting exactly on grid points.

    The conditional-variance term vanishes there, so ``V = sigma_m^2 I`` and
    ``H`` is a row selection of ``C0 sqrt(Kgg)``.
    """
    idx = np.asarray(indices, dtype=int).ravel()
    return MeasurementModel(
        H=C0 * ops.sqrt[idx],
        V=sigma_m ** 2 * np.eye(len(idx)),
        sensor_locations=ops.grid.points[idx],
        grid_indices=idx,
    )


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    Sigma: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class FieldEstimate:
    f_hat: np.ndarray
    Pi: np.ndarray
    clarity_per_point: np.ndarray


def initial_state(pm: ProcessModel) -> FilterState:
    """Zero mean with the stationary latent covariance as prior."""
    n = pm.n_grid
    return FilterState(np.zeros(n), pm.realization.stationary_variance * np.eye(n), 0.0)


def kf_update(state: FilterState, mm: MeasurementModel, y, return_nis: bool = False):
    """Measurement update; optionally also returns the normalized innovation squared."""
    H, V = mm.H, mm.V
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if H.shape[1] != state.mean.shape[0] or y.shape[0] != H.shape[0]:
        raise DimensionMismatch(f"H {H.shape}, y {y.shape}, state {state.mean.shape}")
    HS = H @ state.Sigma
    S = symmetrize(HS @ H.T + V)
    w = np.linalg.eigvalsh(S)
    if w[0] <= 0 or w[-1] / w[0] > INNOVATION_COND_LIMIT:
        raise SingularInnovation(f"innovation covariance is singular (eigenvalues {w[0]:.3e}..{w[-1]:.3e})")
    innov = y - H @ state.mean
    X = np.linalg.solve(S, np.column_stack([HS, innov]))
    mean = state.mean + HS.T @ X[:, -1]
    Sigma = symmetrize(state.Sigma - HS.T @ X[:, :-1])
    new = FilterState(mean, Sigma, state.timestamp)
    if return_nis:
        return new, float(innov @ X[:, -1])
    return new


def kf_predict(state: FilterState, pm: ProcessModel) -> FilterState:
    mean = pm.phi0 * state.mean
    Sigma = symmetrize(pm.phi0 ** 2 * state.Sigma + pm.qd0 * np.eye(pm.n_grid))
    return FilterState(mean, Sigma, state.timestamp + pm.dt)


def field_covariance(Sigma: np.ndarray, Kgg_sqrt: np.ndarray, C0: float) -> np.ndarray:
    """The congruence ``T(X) = sqrt(Kgg) C X C^T sqrt(Kgg)``."""
    return symmetrize(C0 ** 2 * (Kgg_sqrt @ Sigma @ Kgg_sqrt))


def field_variance(Sigma: np.ndarray, Kgg_sqrt: np.ndarray, C0: float) -> np.ndarray:
    """Diagonal of ``T(Sigma)`` without forming the full product."""
    return C0 ** 2 * np.sum((Kgg_sqrt @ Sigma) * Kgg_sqrt, axis=1)


def project_field(state: FilterState, Kgg_sqrt: np.ndarray, C0: float) -> FieldEstimate:
    f_hat = C0 * (Kgg_sqrt @ state.mean)
    Pi = field_covariance(state.Sigma, Kgg_sqrt, C0)
    var = np.clip(np.diag(Pi), 0.0, None)
    return FieldEstimate(f_hat, Pi, 1.0 / (1.0 + var))


def simulate_truth(pm: ProcessModel, Kgg_sqrt: np.ndarray, C0: float, horizon: int, rng, s0=None):
    """Sample the latent OU states on the grid and the induced field.

    Returns ``(latent, field)`` arrays of shape ``(horizon + 1, N_g)``. The
    initial latent state is drawn from the stationary law unless given.
    """
    rng = np.random.default_rng(rng)
    n = pm.n_grid
    s = np.empty((horizon + 1, n))
    if s0 is None:
        s[0] = rng.standard_normal(n) * np.sqrt(pm.stationary_variance)
    else:
        s[0] = s0
    noise = rng.standard_normal((horizon, n)) * np.sqrt(pm.qd0)
    for k in range(horizon):
        s[k + 1] = pm.phi0 * s[k] + noise[k]
    return s, C0 * s @ Kgg_sqrt.T


def grid_indices(grid: Grid, locations, snap: bool = False, tol: float = 1e-9) -> np.ndarray:
    """Map sensor locations to grid indices for truth-mode sampling.

    Off-grid locations raise unless ``snap`` is set, in which case they go
    to the nearest grid point.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    idx = grid.nearest_index(locations)
    if not snap:
        gap = np.linalg.norm(grid.points[idx] - locations, axis=1)
        if np.any(gap > tol):
            raise OffGridSensorInTruthMode(f"sensor at {locations[np.argmax(gap)]} is not on the grid")
    return idx


def simulate_measurements(field: np.ndarray, sensor_indices, sigma_m: float, rng) -> np.ndarray:
    """``y_j = f(r_j) + eta_j`` with i.i.d. ``N(0, sigma_m^2)`` noise."""
    rng = np.random.default_rng(rng)
    idx = np.asarray(sensor_indices, dtype=int).ravel()
    return field[idx] + sigma_m * rng.standard_normal(len(idx))
