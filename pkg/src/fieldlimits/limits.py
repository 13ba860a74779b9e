"""Clarity, its certified lower bounds and the sensor-count design search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidValue, NegativeVariance, TruncationNotAchievable, Unachievable
from .kernels import Grid, SpatialKernelSpec, SpatialOperators, StateSpaceRealization
from .riccati import care_closed_form_isotropic, gamma_eigmap
from .sensing import SensingParams, averaged_information_closed_form
from .spd import check_symmetric, symmetrize

CLARITY_KINDS = ("empirical", "expected", "bound", "steady_state_bound")
THETA_DIGITS = 12
DEFAULT_SEARCH_CAP = 1 << 20


def normalize_theta(theta: float) -> float:
    """Round to 12 significant digits so equal-theta inputs give equal outputs.

    ``N_r / (sigma_m^2 dt)`` evaluated for two parameter triples with the
    same ratio can differ in the last ulp; rounding removes that.
    """
    if theta < 0:
        raise InvalidValue(f"theta must be >= 0, got {theta}")
    return float(f"{theta:.{THETA_DIGITS}g}")


@dataclass(frozen=True)
class ClarityReport:
    per_point: np.ndarray
    averaged: float
    kind: str

    def __post_init__(self):
        if self.kind not in CLARITY_KINDS:
            raise InvalidValue(f"kind must be one of {CLARITY_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class DesignResult:
    q_target: float
    N_r_min: int
    achieved_bound: float
    trace: list[tuple[int, float]] = field(default_factory=list)


@dataclass(frozen=True)
class GridLimit:
    """Truncated infinite-sum estimate of the grid-independent clarity bound.

    ``value`` uses the first ``n_terms`` reference eigenvalues; the true
    truncated-away contribution to the denominator is at most ``tail_bound``,
    so the limit lies in ``[lower, value]``.
    """

    value: float
    lower: float
    n_terms: int
    tail_bound: float


def clarity_scalar(variance):
    """``1 / (1 + variance)``."""
    v = np.asarray(variance, dtype=float)
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise NegativeVariance(f"variance must be >= 0, got min {np.nanmin(v) if v.size else v}")
    q = 1.0 / (1.0 + v)
    return q if q.ndim else float(q)


def clarity_report(Pi: np.ndarray, kind: str = "empirical") -> ClarityReport:
    """Per-point and averaged clarity from the diagonal of ``Pi``.

    A small negative diagonal from roundoff is clipped to zero.
    """
    d = np.diag(np.atleast_2d(Pi)).copy()
    if np.any(d < -1e-10 * max(1.0, float(np.max(np.abs(d))))):
        raise NegativeVariance(f"negative diagonal entry {d.min():.3e}")
    q = clarity_scalar(np.clip(d, 0.0, None))
    return ClarityReport(per_point=np.atleast_1d(q), averaged=float(np.mean(q)), kind=kind)


def averaged_clarity(Pi: np.ndarray) -> float:
    """Mean over grid points of ``1 / (1 + Pi_ii)``."""
    return clarity_report(Pi).averaged


def clarity_lower_bound(DeltaPi: np.ndarray, N_g: int | None = None) -> float:
    """``1 / (1 + trace(DeltaPi) / N_g)``; a floor on the averaged clarity.

    By convexity of ``x -> 1/(1+x)`` this never exceeds ``averaged_clarity``
    of any ``Pi`` whose diagonal is dominated by that of ``DeltaPi``.
    """
    D = np.atleast_2d(DeltaPi)
    N_g = D.shape[0] if N_g is None else N_g
    tr = float(np.trace(D))
    if tr < -1e-10:
        raise NegativeVariance(f"trace {tr:.3e} is negative")
    return 1.0 / (1.0 + max(tr, 0.0) / N_g)


def _isotropic_params(real: StateSpaceRealization) -> tuple[float, float]:
    if real.n_k != 1:
        raise InvalidValue("closed-form bounds need a scalar temporal realization (n_k = 1)")
    return real.A0, real.q_c


def bound_from_theta_eigen(theta: float, kgg_eigvals: np.ndarray, real: StateSpaceRealization) -> float:
    """Steady-state clarity bound from the spectrum of ``Kgg``.

    With ``nu_i / |D| = mu_i / N_g`` for eigenvalues ``mu_i`` of ``Kgg`` the
    bound is ``1 / (1 + C0^2 sum_i (mu_i/N_g) gamma(theta C0^2 mu_i / N_g))``.
    """
    a, q_c = _isotropic_params(real)
    theta = normalize_theta(theta)
    w = np.clip(np.asarray(kgg_eigvals, dtype=float), 0.0, None) / len(kgg_eigvals)
    c2 = real.C0 ** 2
    denom = 1.0 + c2 * float(np.sum(w * gamma_eigmap(a, q_c, theta * c2 * w)))
    return 1.0 / denom


def steady_state_field_covariance(
    params: SensingParams,
    ops: SpatialOperators,
    real: StateSpaceRealization,
) -> np.ndarray:
    """``C0^2 Kgg^{1/2} Delta_inf Kgg^{1/2}`` with ``Delta_inf`` in closed form."""
    a, q_c = _isotropic_params(real)
    G_bar = averaged_information_closed_form(params, ops.Kgg, real.C0, ops.grid.count)
    Delta = care_closed_form_isotropic(a, q_c, G_bar)
    S = ops.sqrt
    return symmetrize(real.C0 ** 2 * (S @ Delta @ S))


def steady_state_clarity_bound(
    params: SensingParams,
    grid: Grid,
    spec: SpatialKernelSpec,
    real: StateSpaceRealization,
    ops: SpatialOperators | None = None,
    path: str = "eigen",
) -> float:
    """Closed-form steady-state lower bound on the averaged clarity.

    ``path="trace"`` forms the steady-state field covariance bound explicitly
    and reduces it by its trace; ``path="eigen"`` evaluates the equivalent
    scalar sum over the spectrum of ``Kgg``. The two agree to roundoff.
    """
    ops = SpatialOperators(grid, spec) if ops is None else ops
    if path == "eigen":
        return bound_from_theta_eigen(params.theta, ops.eigvals, real)
    if path == "trace":
        return clarity_lower_bound(steady_state_field_covariance(params, ops, real), grid.count)
    raise InvalidValue(f"path must be 'eigen' or 'trace', got {path!r}")


def zero_sensor_clarity(spec: SpatialKernelSpec, real: StateSpaceRealization) -> float:
    """The bound with no information: ``1 / (1 + C0^2 gamma(0) sigma_s^2)``."""
    a, q_c = _isotropic_params(real)
    return 1.0 / (1.0 + real.C0 ** 2 * gamma_eigmap(a, q_c, 0.0) * spec.sigma_s ** 2)


def grid_limit_clarity(
    theta: float,
    nu_ref: np.ndarray,
    C0: float,
    domain_measure: float,
    a: float,
    q_c: float,
    truncation_tol: float = 1e-6,
    trace_total: float | None = None,
) -> GridLimit:
    """Grid-independent bound ``1 / (1 + C0^2 sum_i (nu_i/|D|) gamma(theta C0^2 nu_i/|D|))``.

    ``nu_ref`` are operator eigenvalues estimated on a fine reference grid.
    ``trace_total`` is the operator trace ``|D| sigma_s^2``; it defaults to
    ``sum(nu_ref)``, which is exact for Nystrom eigenvalues. Terms are kept
    until the remaining trace, weighted by ``C0^2 gamma(0) / |D|``, is below
    ``truncation_tol``.
    """
    if not truncation_tol > 0:
        raise InvalidValue("truncation_tol must be positive")
    theta = normalize_theta(theta)
    nu = np.sort(np.clip(np.asarray(nu_ref, dtype=float), 0.0, None))[::-1]
    total = float(np.sum(nu)) if trace_total is None else float(trace_total)
    c2 = C0 ** 2
    g0 = gamma_eigmap(a, q_c, 0.0)
    tails = c2 * g0 * np.clip(total - np.concatenate(([0.0], np.cumsum(nu))), 0.0, None) / domain_measure
    ok = np.flatnonzero(tails < truncation_tol)
    if ok.size == 0:
        raise TruncationNotAchievable(
            f"tail bound {tails[-1]:.3e} after all {nu.size} reference eigenvalues exceeds {truncation_tol:.1e}"
        )
    m = int(ok[0])
    w = nu[:m] / domain_measure
    denom = 1.0 + c2 * float(np.sum(w * gamma_eigmap(a, q_c, theta * c2 * w)))
    return GridLimit(value=1.0 / denom, lower=1.0 / (denom + tails[m]), n_terms=m, tail_bound=float(tails[m]))


def design_sensor_count(
    q_target: float,
    params_base: SensingParams,
    grid: Grid,
    spec: SpatialKernelSpec,
    real: StateSpaceRealization,
    cap: int = DEFAULT_SEARCH_CAP,
    ops: SpatialOperators | None = None,
) -> DesignResult:
    """Smallest ``N_r`` whose steady-state bound reaches ``q_target``.

    The bound increases with ``N_r``, so exponential bracketing followed by
    bisection finds the minimum. ``sigma_m`` and ``dt`` come from
    ``params_base``; its ``N_r`` is ignored.
    """
    if not 0.0 < q_target < 1.0:
        raise Unachievable(f"q_target must lie in (0, 1), got {q_target}")
    ops = SpatialOperators(grid, spec) if ops is None else ops
    trace: list[tuple[int, float]] = []

    def bound(n: int) -> float:
        p = SensingParams(N_r=n, sigma_m=params_base.sigma_m, dt=params_base.dt)
        q = bound_from_theta_eigen(p.theta, ops.eigvals, real)
        trace.append((n, q))
        return q

    hi = 1
    q_hi = bound(hi)
    while q_hi < q_target:
        if hi >= cap:
            raise Unachievable(f"bound {q_hi:.6f} at the search cap N_r={cap} is below {q_target}")
        hi = min(2 * hi, cap)
        q_hi = bound(hi)
    lo = hi // 2  # bound(lo) < target, or lo == 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        q_mid = bound(mid)
        if q_mid >= q_target:
            hi, q_hi = mid, q_mid
        else:
            lo = mid
    return DesignResult(q_target=q_target, N_r_min=hi, achieved_bound=q_hi, trace=trace)


@dataclass(frozen=True)
class NoiseRateSweep:
    """Bound over a ``(sigma_m, dt)`` lattice; rows index ``sigma_m``."""

    N_r: int
    sigma_m: np.ndarray
    dt: np.ndarray
    theta: np.ndarray
    clarity: np.ndarray

    def iso_theta_groups(self) -> dict[float, list[tuple[int, int]]]:
        """Lattice cells grouped by their (normalized) theta."""
        groups: dict[float, list[tuple[int, int]]] = {}
        for (i, j), th in np.ndenumerate(self.theta):
            groups.setdefault(th, []).append((i, j))
        return groups


def sweep_noise_rate(
    N_r: int,
    sigma_m_list,
    dt_list,
    grid: Grid,
    spec: SpatialKernelSpec,
    real: StateSpaceRealization,
    ops: SpatialOperators | None = None,
) -> NoiseRateSweep:
    sigma_m = np.asarray(sigma_m_list, dtype=float)
    dt = np.asarray(dt_list, dtype=float)
    if sigma_m.size == 0 or dt.size == 0:
        raise InvalidValue("sigma_m_list and dt_list must be nonempty")
    ops = SpatialOperators(grid, spec) if ops is None else ops
    theta = np.empty((sigma_m.size, dt.size))
    clarity = np.empty_like(theta)
    for i, s in enumerate(sigma_m):
        for j, h in enumerate(dt):
            th = normalize_theta(SensingParams(N_r=N_r, sigma_m=s, dt=h).theta)
            theta[i, j] = th
            clarity[i, j] = bound_from_theta_eigen(th, ops.eigvals, real)
    return NoiseRateSweep(N_r=N_r, sigma_m=sigma_m, dt=dt, theta=theta, clarity=clarity)


def check_pair(Pi: np.ndarray, DeltaPi: np.ndarray) -> tuple[float, float]:
    """``(averaged_clarity(Pi), clarity_lower_bound(DeltaPi))`` after symmetry checks."""
    Pi = check_symmetric(Pi)
    DeltaPi = check_symmetric(DeltaPi)
    return averaged_clarity(Pi), clarity_lower_bound(DeltaPi, Pi.shape[0])
