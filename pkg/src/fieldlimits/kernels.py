"""Matérn-1/2 kernels, grids, kernel matrices and Nyström spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .errors import IllConditionedKgg, InvalidValue, NonDivisibleSpacing
from .spd import spd_sqrt, symmetrize

GRID_LAYOUTS = ("vertex", "cell")
KGG_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class TemporalKernelSpec:
    sigma_t: float = 2.0
    l_t: float = 60.0

    def __post_init__(self):
        if not (self.sigma_t > 0 and self.l_t > 0):
            raise InvalidValue(f"temporal kernel needs sigma_t > 0 and l_t > 0, got {self}")


@dataclass(frozen=True)
class SpatialKernelSpec:
    sigma_s: float = 1.0
    l_s: float = 2.0

    def __post_init__(self):
        if not (self.sigma_s > 0 and self.l_s > 0):
            raise InvalidValue(f"spatial kernel needs sigma_s > 0 and l_s > 0, got {self}")


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_i [lower_i, upper_i]``."""

    lower: tuple[float, ...] = (0.0, 0.0)
    upper: tuple[float, ...] = (5.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(x) for x in self.lower))
        object.__setattr__(self, "upper", tuple(float(x) for x in self.upper))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise InvalidValue("domain lower/upper must have the same nonzero length")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise InvalidValue(f"domain needs upper > lower on every axis, got {self}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> tuple[float, ...]:
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    @property
    def measure(self) -> float:
        return math.prod(self.sides)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        points = np.atleast_2d(points)
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.upper) + tol
        return np.all((points >= lo) & (points <= hi), axis=1)

    @classmethod
    def box(cls, side: float, dim: int = 2) -> "Domain":
        return cls((0.0,) * dim, (float(side),) * dim)


@dataclass(frozen=True)
class Grid:
    domain: Domain
    delta: float
    layout: str
    points: np.ndarray = field(repr=False, compare=False)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @property
    def cell_weight(self) -> float:
        """Quadrature weight ``|D| / N_g`` of the Nyström rule."""
        return self.domain.measure / self.count

    def nearest_index(self, locations: np.ndarray) -> np.ndarray:
        """Index of the closest grid point for each location."""
        d = cdist(np.atleast_2d(locations), self.points)
        return np.argmin(d, axis=1)


@dataclass(frozen=True)
class StateSpaceRealization:
    A0: float
    B0: float
    C0: float
    n_k: int = 1

    @property
    def q_c(self) -> float:
        return self.B0 ** 2

    @property
    def stationary_variance(self) -> float:
        """Stationary latent variance, the root of ``2 A0 p + B0^2 = 0``."""
        return -self.B0 ** 2 / (2.0 * self.A0)


def temporal_kernel_eval(t, t_prime, spec: TemporalKernelSpec):
    return spec.sigma_t ** 2 * np.exp(-np.abs(np.subtract(t, t_prime)) / spec.l_t)


def spatial_kernel_eval(p, p_prime, spec: SpatialKernelSpec):
    dist = np.linalg.norm(np.subtract(p, p_prime), axis=-1)
    return spec.sigma_s ** 2 * np.exp(-dist / spec.l_s)


def spatial_kernel_matrix(X: np.ndarray, Y: np.ndarray, spec: SpatialKernelSpec) -> np.ndarray:
    """Cross-covariance ``[k_S(x_i, y_j)]`` between two point sets."""
    return spec.sigma_s ** 2 * np.exp(-cdist(np.atleast_2d(X), np.atleast_2d(Y)) / spec.l_s)


def temporal_state_space(spec: TemporalKernelSpec) -> StateSpaceRealization:
    """Scalar SDE realization of the exponential temporal kernel.

    ``ds = -(1/l_t) s dt + dW`` observed through ``C0 = sigma_t sqrt(2/l_t)``
    has stationary covariance ``sigma_t^2 exp(-|tau|/l_t)``.
    """
    return StateSpaceRealization(
        A0=-1.0 / spec.l_t,
        B0=1.0,
        C0=spec.sigma_t * math.sqrt(2.0 / spec.l_t),
    )


def _axis_count(side: float, delta: float) -> int:
    ratio = side / delta
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise NonDivisibleSpacing(f"side length {side} is not an integer multiple of delta={delta}")
    return int(n)


def snap_spacing(domain: Domain, delta: float) -> float:
    """Nearest spacing to ``delta`` that divides every side of ``domain``.

    Returns ``delta`` itself when it already divides the domain.
    """
    if not delta > 0:
        raise InvalidValue(f"grid spacing must be positive, got {delta}")
    try:
        for side in domain.sides:
            _axis_count(side, delta)
        return float(delta)
    except NonDivisibleSpacing:
        pass
    snapped = set()
    for side in domain.sides:
        lo = max(1, math.floor(side / delta))
        n = min((lo, lo + 1), key=lambda m: abs(side / m - delta))
        snapped.add(side / n)
    if len(snapped) != 1 or any(abs(s - next(iter(snapped))) > 1e-12 for s in snapped):
        raise NonDivisibleSpacing(f"no common spacing near {delta} divides the sides {domain.sides}")
    return snapped.pop()


def build_grid(domain: Domain, delta: float, layout: str = "cell") -> Grid:
    """Uniform grid with spacing ``delta`` over ``domain``.

    ``layout="vertex"`` places points on ``lower + k*delta`` including both
    ends, giving ``prod(L_i/delta + 1)`` points. ``layout="cell"`` places them
    at cell centres, giving exactly ``|D| / delta^d`` points. Points are
    ordered row-major (last axis fastest).
    """
    if not delta > 0:
        raise InvalidValue(f"grid spacing must be positive, got {delta}")
    if layout not in GRID_LAYOUTS:
        raise InvalidValue(f"grid layout must be one of {GRID_LAYOUTS}, got {layout!r}")
    axes = []
    for lo, side in zip(domain.lower, domain.sides):
        n = _axis_count(side, delta)
        if layout == "vertex":
            axes.append(lo + delta * np.arange(n + 1))
        else:
            axes.append(lo + delta * (np.arange(n) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return Grid(domain=domain, delta=float(delta), layout=layout, points=points)


def kernel_matrix_gg(grid: Grid, spec: SpatialKernelSpec) -> np.ndarray:
    return symmetrize(spatial_kernel_matrix(grid.points, grid.points, spec))


def kernel_blocks(grid: Grid, sensors: np.ndarray, spec: SpatialKernelSpec):
    """Return ``(Kgr, Krg, Krr)`` for sensors at arbitrary locations."""
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    Kgr = spatial_kernel_matrix(grid.points, sensors, spec)
    Krr = symmetrize(spatial_kernel_matrix(sensors, sensors, spec))
    return Kgr, Kgr.T, Krr


def nystrom_eigenvalues(grid: Grid, spec: SpatialKernelSpec, domain: Domain | None = None) -> np.ndarray:
    """Eigenvalues of ``(|D|/N_g) Kgg``, descending and clamped at zero.

    They approximate the spectrum of the kernel integral operator on the
    domain and sum to ``|D| sigma_s^2`` for every grid.
    """
    domain = grid.domain if domain is None else domain
    return SpatialOperators(grid, spec).nystrom_eigenvalues(domain)


class SpatialOperators:
    """Per-grid cache of ``Kgg`` and the factorizations applied to it.

    Every derived quantity is computed lazily and at most once.
    """

    def __init__(self, grid: Grid, spec: SpatialKernelSpec):
        self.grid = grid
        self.spec = spec

    @cached_property
    def Kgg(self) -> np.ndarray:
        return kernel_matrix_gg(self.grid, self.spec)

    @cached_property
    def _eigh(self) -> tuple[np.ndarray, np.ndarray]:
        w, U = np.linalg.eigh(self.Kgg)
        return np.clip(w, 0.0, None), U

    @property
    def eigvals(self) -> np.ndarray:
        """Eigenvalues of Kgg, ascending."""
        return self._eigh[0]

    @property
    def eigvecs(self) -> np.ndarray:
        return self._eigh[1]

    @cached_property
    def condition(self) -> float:
        w = self.eigvals
        return float(np.inf if w[0] <= 0 else w[-1] / w[0])

    @cached_property
    def sqrt(self) -> np.ndarray:
        return spd_sqrt(self.Kgg)

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        """``Kgg^{-1} sqrt(Kgg) = Kgg^{-1/2}``."""
        self._require_conditioning()
        w, U = self._eigh
        return symmetrize((U / np.sqrt(w)) @ U.T)

    @cached_property
    def cho(self):
        self._require_conditioning()
        return cho_factor(self.Kgg, lower=True)

    def solve(self, B: np.ndarray) -> np.ndarray:
        """``Kgg^{-1} B`` via the cached Cholesky factor."""
        return cho_solve(self.cho, B)

    def _require_conditioning(self):
        if self.condition > KGG_CONDITION_LIMIT:
            raise IllConditionedKgg(f"cond(Kgg) = {self.condition:.3e} exceeds {KGG_CONDITION_LIMIT:.0e}")

    def nystrom_eigenvalues(self, domain: Domain | None = None) -> np.ndarray:
        domain = self.grid.domain if domain is None else domain
        # eigh returns ascending order; a stable reversal keeps ties index-ordered.
        nu = (domain.measure / self.grid.count) * self.eigvals
        return nu[::-1].copy()

