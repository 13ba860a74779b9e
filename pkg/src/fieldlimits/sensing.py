"""Random sensor placement and information matrices."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue, SingularV
from .kernels import Grid, SpatialOperators, kernel_blocks
from .spd import symmetrize
from .stgpkf import build_measurement_model

SAMPLING_MODES = ("iid", "enumerate", "without_replacement")


@dataclass(frozen=True)
class SensingParams:
    N_r: int = 1
    sigma_m: float = 2.0
    dt: float = 0.05

    def __post_init__(self):
        if int(self.N_r) != self.N_r or self.N_r < 1:
            raise InvalidValue(f"N_r must be an integer >= 1, got {self.N_r}")
        if not self.sigma_m > 0:
            raise InvalidValue(f"sigma_m must be positive, got {self.sigma_m}")
        if not self.dt > 0:
            raise InvalidValue(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "N_r", int(self.N_r))

    @property
    def theta(self) -> float:
        """Sensing parameter ``N_r / (sigma_m^2 dt)``."""
        return self.N_r / (self.sigma_m ** 2 * self.dt)


@dataclass(frozen=True)
class SensorDistribution:
    """Uniform placement over grid points, i.i.d. per sensor and step."""

    grid: Grid
    replace: bool = True


def sample_sensor_locations(dist: SensorDistribution, N_r: int, rng) -> np.ndarray:
    """Draw ``N_r`` grid indices. Collisions are allowed when ``replace``."""
    if not dist.replace and N_r > dist.grid.count:
        raise InvalidValue(f"cannot place {N_r} sensors without replacement on {dist.grid.count} points")
    return rng.choice(dist.grid.count, size=N_r, replace=dist.replace)


def information_matrix(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``G = H^T V^-1 H``."""
    H = np.atleast_2d(H)
    V = np.atleast_2d(V)
    w = np.linalg.eigvalsh(symmetrize(V))
    if w[0] <= 0 or w[-1] / w[0] > 1e12:
        raise SingularV(f"measurement covariance is not safely positive definite (min eig {w[0]:.3e})")
    return symmetrize(H.T @ np.linalg.solve(V, H))


def averaged_information_closed_form(params: SensingParams, Kgg: np.ndarray, C0: float, N_g: int | None = None) -> np.ndarray:
    """``theta C0^2 Kgg / N_g`` for uniform on-grid placement."""
    N_g = Kgg.shape[0] if N_g is None else N_g
    return params.theta * C0 ** 2 * Kgg / N_g


def _placements(n_grid: int, N_r: int, mode: str, trials: int, rng):
    if mode == "enumerate":
        combos = np.array(list(itertools.product(range(n_grid), repeat=N_r)))
        return combos, np.full(len(combos), 1.0 / len(combos))
    if mode == "iid":
        return rng.integers(0, n_grid, size=(trials, N_r)), np.full(trials, 1.0 / trials)
    if mode == "without_replacement":
        idx = np.array([rng.choice(n_grid, size=N_r, replace=False) for _ in range(trials)])
        return idx, np.full(trials, 1.0 / trials)
    raise InvalidValue(f"sampling mode must be one of {SAMPLING_MODES}, got {mode!r}")


def averaged_information_monte_carlo(
    ops: SpatialOperators,
    params: SensingParams,
    C0: float,
    trials: int = 10_000,
    rng=None,
    mode: str = "iid",
) -> np.ndarray:
    """Empirical mean of ``H^T (dt V)^-1 H`` over random placements.

    Each placement goes through the general conditioning formulas for ``H``
    and ``V``, not the on-grid shortcut, so this is an independent check of
    the closed form. ``mode="enumerate"`` averages over all ``N_g^N_r``
    placements exactly.
    """
    rng = np.random.default_rng(rng)
    placements, weights = _placements(ops.grid.count, params.N_r, mode, trials, rng)
    G = np.zeros((ops.grid.count, ops.grid.count))
    for idx, w in zip(placements, weights):
        mm = build_measurement_model(ops, ops.grid.points[idx], C0, params.sigma_m)
        G += w * information_matrix(mm.H, params.dt * mm.V)
    return symmetrize(G)


def expected_kgr_krg(ops: SpatialOperators, N_r: int, mode: str = "enumerate", trials: int = 10_000, rng=None) -> np.ndarray:
    """Average of ``Kgr Krg`` over placements (enumeration or sampling)."""
    rng = np.random.default_rng(rng)
    placements, weights = _placements(ops.grid.count, N_r, mode, trials, rng)
    out = np.zeros((ops.grid.count, ops.grid.count))
    for idx, w in zip(placements, weights):
        Kgr, Krg, _ = kernel_blocks(ops.grid, ops.grid.points[idx], ops.spec)
        out += w * (Kgr @ Krg)
    return out
