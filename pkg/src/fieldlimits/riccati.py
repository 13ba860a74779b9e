"""Riccati operators, the averaged-information bound ODE and its closed form.

The continuous flow ``dD/dt = A D + D A^T + Qc - D Gbar D`` upper-bounds the
expected Kalman-Bucy covariance under randomized sensing when ``Gbar`` is
the expected information matrix. For isotropic ``A = aI``, ``Qc = q_c I``
the flow decouples in the eigenbasis of ``Gbar`` and its steady state is
available in closed form. The discrete mixture recursion is the analogous
bound for the sampled-data filter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import expm

from .errors import BadProbabilities, DimensionMismatch, SingularInnovation, StepTooLarge
from .spd import check_symmetric, clamp_psd, mean_diag, symmetrize

PSD_TOL = 1e-8
STEADY_TOL = 1e-9
STEADY_CONSECUTIVE = 10
INNOVATION_COND_LIMIT = 1e12

Observer = Callable[[np.ndarray], float]


def _scalar_identity(M: np.ndarray) -> float | None:
    """Return ``c`` when ``M == c I`` exactly, else None."""
    c = float(M[0, 0])
    if np.array_equal(M, c * np.eye(M.shape[0])):
        return c
    return None


@dataclass(frozen=True)
class ContinuousSystem:
    A: np.ndarray
    Qc: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Qc = check_symmetric(self.Qc)
        if A.shape != Qc.shape or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A {A.shape} and Qc {Qc.shape} must be equal square shapes")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Qc", Qc)

    @classmethod
    def isotropic(cls, a: float, q_c: float, n: int) -> "ContinuousSystem":
        return cls(a * np.eye(n), q_c * np.eye(n))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def isotropic_params(self) -> tuple[float, float] | None:
        a, q = _scalar_identity(self.A), _scalar_identity(self.Qc)
        if a is None or q is None:
            return None
        return a, q


@dataclass(frozen=True)
class DiscreteSystem:
    Phi: np.ndarray
    Qd: np.ndarray

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        Qd = check_symmetric(self.Qd)
        if Phi.shape != Qd.shape or Phi.shape[0] != Phi.shape[1]:
            raise DimensionMismatch(f"Phi {Phi.shape} and Qd {Qd.shape} must be equal square shapes")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Qd", Qd)

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @classmethod
    def from_continuous(cls, sys: ContinuousSystem, dt: float) -> "DiscreteSystem":
        """Exact zero-order discretization (Van Loan's block exponential)."""
        n = sys.n
        iso = sys.isotropic_params
        if iso is not None:
            a, q = iso
            phi = np.exp(a * dt)
            qd = q * np.expm1(2 * a * dt) / (2 * a) if a != 0 else q * dt
            return cls(phi * np.eye(n), qd * np.eye(n))
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = -sys.A
        M[:n, n:] = sys.Qc
        M[n:, n:] = sys.A.T
        E = expm(M * dt)
        Phi = E[n:, n:].T
        return cls(Phi, symmetrize(Phi @ E[:n, n:]))

    def predict(self, Sigma: np.ndarray) -> np.ndarray:
        phi = _scalar_identity(self.Phi)
        if phi is not None:
            return symmetrize(phi * phi * Sigma + self.Qd)
        return symmetrize(self.Phi @ Sigma @ self.Phi.T + self.Qd)


@dataclass
class BoundTrajectory:
    """Recorded samples of a bound ``Delta(t)`` or ``Delta_k``.

    ``mean_diag`` holds the mean-of-diagonal reduction at every recorded
    time; ``matrices`` is only populated when requested.
    """

    times: np.ndarray
    mean_diag: np.ndarray
    final: np.ndarray
    matrices: np.ndarray | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    steady_time: float | None = None
    mixture_se: np.ndarray | None = None

    def __len__(self):
        return len(self.times)


def riccati_operator_continuous(Sigma: np.ndarray, sys: ContinuousSystem, G: np.ndarray) -> np.ndarray:
    """``A S + S A^T + Qc - S G S``."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if Sigma.shape != sys.A.shape or G.shape != sys.A.shape:
        raise DimensionMismatch(f"Sigma {Sigma.shape}, G {G.shape} do not match A {sys.A.shape}")
    AS = sys.A @ Sigma
    return symmetrize(AS + AS.T + sys.Qc - Sigma @ G @ Sigma)


def riccati_operator_discrete(Sigma: np.ndarray, sys: DiscreteSystem, H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """One prior-to-prior step ``Phi (S - S H^T (H S H^T + V)^-1 H S) Phi^T + Qd``."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if Sigma.shape != sys.Phi.shape or H.shape[1] != sys.n or V.shape != (H.shape[0],) * 2:
        raise DimensionMismatch(f"Sigma {Sigma.shape}, H {H.shape}, V {V.shape} inconsistent with n={sys.n}")
    corr, _ = _mixture_correction(Sigma, H[None], V[None], np.ones(1))
    return sys.predict(Sigma - corr)


def gamma_eigmap(a: float, q_c: float, lam):
    """Stabilizing root of ``q_c + 2 a g - lam g^2 = 0`` for ``a < 0``.

    Written as ``-q_c / (a - sqrt(a^2 + q_c lam))`` so both terms in the
    denominator are negative and nothing cancels.
    """
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
    g = -q_c / (a - np.sqrt(a * a + q_c * lam))
    return g if g.ndim else float(g)


def care_closed_form_isotropic(a: float, q_c: float, G_bar: np.ndarray) -> np.ndarray:
    """Steady state ``-q_c (aI - sqrt(a^2 I + q_c Gbar))^{-1}``.

    Evaluated in the eigenbasis of ``Gbar``: ``U diag(gamma(lambda_i)) U^T``.
    """
    if not (a < 0 and q_c > 0):
        raise ValueError(f"closed form needs a < 0 and q_c > 0, got a={a}, q_c={q_c}")
    G_bar = check_symmetric(G_bar)
    lam, U = np.linalg.eigh(symmetrize(G_bar))
    return symmetrize((U * gamma_eigmap(a, q_c, lam)) @ U.T)


def care_residual(Delta: np.ndarray, sys: ContinuousSystem, G_bar: np.ndarray) -> np.ndarray:
    return riccati_operator_continuous(Delta, sys, G_bar)


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_psd(M: np.ndarray, t: float) -> np.ndarray:
    if not np.all(np.isfinite(M)):
        raise StepTooLarge(f"non-finite iterate at t={t:g}; reduce dt_ode")
    repaired, lowest = clamp_psd(M)
    scale = max(1.0, float(np.max(np.abs(M))))
    if lowest < -PSD_TOL * scale:
        raise StepTooLarge(f"iterate lost PSD (min eig {lowest:.3e}) at t={t:g}; reduce dt_ode")
    return repaired if lowest < 0 else M


def integrate_bound_ode(
    sys: ContinuousSystem,
    G_bar: np.ndarray,
    Delta0: np.ndarray,
    t_end: float,
    dt_ode: float,
    record_every: int = 1,
    keep_matrices: bool = False,
    stop_at_steady_state: bool = False,
    observers: Mapping[str, Observer] | None = None,
    method: str = "auto",
) -> BoundTrajectory:
    """Fixed-step RK4 integration of the bound ODE from ``Delta0``.

    ``method="eigen"`` integrates the decoupled scalar equations in the
    eigenbasis of ``G_bar``; it requires an isotropic system and a ``Delta0``
    that commutes with ``G_bar``. ``"auto"`` picks it whenever it applies,
    ``"dense"`` always integrates the full matrix equation. Both apply the
    same RK4 scheme to the same ODE.

    With ``stop_at_steady_state`` the run ends once the relative per-step
    change stays below 1e-9 for 10 consecutive steps (or at ``t_end``).
    """
    if not dt_ode > 0:
        raise ValueError("dt_ode must be positive")
    G_bar = check_symmetric(G_bar)
    Delta0 = check_symmetric(Delta0)
    if G_bar.shape != sys.A.shape or Delta0.shape != sys.A.shape:
        raise DimensionMismatch(f"G_bar {G_bar.shape}, Delta0 {Delta0.shape} vs n={sys.n}")
    observers = dict(observers or {})
    n_steps = int(round(t_end / dt_ode))
    if abs(n_steps * dt_ode - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a multiple of dt_ode={dt_ode}")

    basis = None
    if method in ("auto", "eigen"):
        basis = _eigen_basis(sys, G_bar, Delta0)
        if basis is None and method == "eigen":
            raise ValueError("eigen method needs an isotropic system and Delta0 commuting with G_bar")
    elif method != "dense":
        raise ValueError(f"unknown method {method!r}")

    if basis is not None:
        (a, q), lam, U, x = basis
        f = lambda v: 2.0 * a * v + q - lam * v * v
        to_matrix = lambda v: symmetrize((U * v) @ U.T)
        state_norm = np.linalg.norm
    else:
        A, Qc, G = sys.A, sys.Qc, G_bar

        def f(D):
            AD = A @ D
            return AD + AD.T + Qc - D @ G @ D

        x = symmetrize(Delta0.copy())
        to_matrix = lambda D: D
        state_norm = np.linalg.norm

    times, diag_means, mats = [], [], []
    extra = {name: [] for name in observers}

    def record(k, state):
        M = to_matrix(state)
        times.append(k * dt_ode)
        diag_means.append(mean_diag(M))
        if keep_matrices:
            mats.append(M)
        for name, fn in observers.items():
            extra[name].append(fn(M))

    record(0, x)
    calm = 0
    steady_time = None
    last = 0
    for k in range(1, n_steps + 1):
        x_new = _rk4_step(f, x, dt_ode)
        if basis is not None:
            if not np.all(np.isfinite(x_new)) or x_new.min() < -PSD_TOL * max(1.0, np.abs(x_new).max()):
                raise StepTooLarge(f"iterate lost PSD at t={k * dt_ode:g}; reduce dt_ode")
            x_new = np.maximum(x_new, 0.0)
        else:
            x_new = symmetrize(x_new)
            if k % record_every == 0 or k == n_steps:
                x_new = _check_psd(x_new, k * dt_ode)
        change = state_norm(x_new - x)
        scale = state_norm(x)
        x = x_new
        last = k
        if k % record_every == 0:
            record(k, x)
        if stop_at_steady_state:
            calm = calm + 1 if change < STEADY_TOL * scale else 0
            if calm >= STEADY_CONSECUTIVE:
                steady_time = k * dt_ode
                break
    if last % record_every != 0:
        record(last, x)

    return BoundTrajectory(
        times=np.asarray(times),
        mean_diag=np.asarray(diag_means),
        final=to_matrix(x),
        matrices=np.asarray(mats) if keep_matrices else None,
        extra={k: np.asarray(v) for k, v in extra.items()},
        steady_time=steady_time,
    )


def _eigen_basis(sys: ContinuousSystem, G_bar: np.ndarray, Delta0: np.ndarray):
    iso = sys.isotropic_params
    if iso is None:
        return None
    lam, U = np.linalg.eigh(symmetrize(G_bar))
    D0 = U.T @ Delta0 @ U
    off = D0 - np.diag(np.diag(D0))
    if np.linalg.norm(off) > 1e-12 * max(1.0, np.linalg.norm(D0)):
        return None
    return iso, np.maximum(lam, 0.0), U, np.diag(D0).copy()


Deployment = tuple  # (H, V, pi)


def _stack_deployments(deployments) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(deployments, tuple) and len(deployments) == 3 and np.ndim(deployments[0]) == 3:
        Hs, Vs, pis = deployments
    else:
        deployments = list(deployments)
        if not deployments:
            raise BadProbabilities("at least one deployment is required")
        Hs = np.stack([np.atleast_2d(d[0]) for d in deployments])
        Vs = np.stack([np.atleast_2d(d[1]) for d in deployments])
        pis = np.array([float(d[2]) for d in deployments])
    Hs = np.asarray(Hs, dtype=float)
    Vs = np.asarray(Vs, dtype=float)
    pis = np.asarray(pis, dtype=float)
    if np.any(pis < 0) or abs(pis.sum() - 1.0) > 1e-12:
        raise BadProbabilities(f"deployment probabilities must be >= 0 and sum to 1 (sum={pis.sum():.15g})")
    return Hs, Vs, pis


def _mixture_correction(Delta, Hs, Vs, pis):
    """``sum_i pi_i D H_i^T (H_i D H_i^T + V_i)^-1 H_i D`` and per-term mean diagonals."""
    HD = Hs @ Delta  # (M, r, n)
    S = HD @ np.swapaxes(Hs, 1, 2) + Vs
    if S.shape[1] == 1:
        s = S[:, 0, 0]
        if not np.all(np.isfinite(s) & (s > 0)):
            raise SingularInnovation("innovation variance is not positive")
        X = HD / s[:, None, None]
    else:
        w = np.linalg.eigvalsh(S)
        if np.any(w[:, 0] <= 0) or np.any(w[:, -1] / w[:, 0] > INNOVATION_COND_LIMIT):
            raise SingularInnovation("innovation covariance is numerically singular")
        # small well-conditioned blocks: a batched inverse beats a batched solve here
        X = np.linalg.inv(S) @ HD
    n = Delta.shape[0]
    per_term = np.sum(HD * X, axis=(1, 2)) / n
    # sum_i pi_i HD_i^T X_i as one (M r) x n product
    corr = (HD * pis[:, None, None]).reshape(-1, n).T @ X.reshape(-1, n)
    return symmetrize(corr), per_term


def discrete_bound_recursion(
    sys: DiscreteSystem,
    deployments,
    Delta0: np.ndarray,
    steps: int,
    keep_matrices: bool = False,
    observers: Mapping[str, Observer] | None = None,
) -> BoundTrajectory:
    """Mixture recursion ``Delta_{k+1} = sum_i pi_i R_{H_i,V_i}(Delta_k)``.

    ``deployments`` is either a fixed collection of ``(H_i, V_i, pi_i)``
    (a list of tuples or pre-stacked ``(Hs, Vs, pis)`` arrays) or a callable
    ``k -> collection`` for step-dependent deployment sets. The returned
    ``mixture_se`` is the standard error of the correction's mean diagonal
    across deployments, which quantifies sampling error when the set is a
    random sample of placements.
    """
    Delta = check_symmetric(Delta0).copy()
    if Delta.shape != sys.Phi.shape:
        raise DimensionMismatch(f"Delta0 {Delta.shape} vs n={sys.n}")
    fixed = None if callable(deployments) else _stack_deployments(deployments)
    observers = dict(observers or {})
    times, diag_means, ses, mats = [0.0], [mean_diag(Delta)], [0.0], [Delta] if keep_matrices else []
    extra = {name: [fn(Delta)] for name, fn in observers.items()}
    for k in range(steps):
        Hs, Vs, pis = fixed if fixed is not None else _stack_deployments(deployments(k))
        corr, per_term = _mixture_correction(Delta, Hs, Vs, pis)
        Delta = sys.predict(Delta - corr)
        times.append(k + 1.0)
        diag_means.append(mean_diag(Delta))
        m = len(per_term)
        ses.append(float(np.std(per_term, ddof=1) / np.sqrt(m)) if m > 1 and fixed is None else 0.0)
        if keep_matrices:
            mats.append(Delta)
        for name, fn in observers.items():
            extra[name].append(fn(Delta))
    Delta = _check_psd(Delta, float(steps))
    return BoundTrajectory(
        times=np.asarray(times),
        mean_diag=np.asarray(diag_means),
        final=Delta,
        matrices=np.asarray(mats) if keep_matrices else None,
        extra={k: np.asarray(v) for k, v in extra.items()},
        mixture_se=np.asarray(ses),
    )
