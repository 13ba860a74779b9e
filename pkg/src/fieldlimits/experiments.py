"""Monte Carlo harness and study drivers that emit CSV artifacts."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidValue
from .kernels import (
    Domain,
    SpatialKernelSpec,
    SpatialOperators,
    TemporalKernelSpec,
    build_grid,
    snap_spacing,
    temporal_state_space,
)
from .limits import (
    bound_from_theta_eigen,
    clarity_scalar,
    grid_limit_clarity,
    normalize_theta,
)
from .riccati import BoundTrajectory, discrete_bound_recursion, integrate_bound_ode
from .sensing import SensingParams, averaged_information_closed_form
from .stgpkf import (
    discretize_process,
    field_variance,
    initial_state,
    kf_predict,
    kf_update,
    measurement_model_on_grid,
    simulate_measurements,
    simulate_truth,
)
from .spd import mean_diag

log = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.17g}"
TAIL_FRACTION = 0.1
DEPLOY_STREAM = 2 ** 31


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a run; the defaults are the reference environment."""

    temporal: TemporalKernelSpec = field(default_factory=TemporalKernelSpec)
    spatial: SpatialKernelSpec = field(default_factory=SpatialKernelSpec)
    domain: Domain = field(default_factory=Domain)
    delta: float = 0.5
    grid_layout: str = "vertex"
    dt: float = 0.05
    t_max: float = 120.0
    sigma_m: float = 2.0
    N_r: int = 1
    trials: int = 30
    seed: int = 0
    deployments: int = 200
    ode_substeps: int = 20
    out_dir: str = "runs"

    def __post_init__(self):
        for name in ("delta", "dt", "t_max", "sigma_m"):
            if not getattr(self, name) > 0:
                raise InvalidValue(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("N_r", "trials", "deployments", "ode_substeps"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidValue(f"{name} must be an integer >= 1, got {v}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidValue(f"seed must be a non-negative integer, got {self.seed}")

    @property
    def steps(self) -> int:
        n = int(round(self.t_max / self.dt))
        if abs(n * self.dt - self.t_max) > 1e-9 * self.t_max:
            raise InvalidValue(f"t_max={self.t_max} is not a multiple of dt={self.dt}")
        return n

    @property
    def sensing(self) -> SensingParams:
        return SensingParams(N_r=self.N_r, sigma_m=self.sigma_m, dt=self.dt)

    @property
    def realization(self):
        return temporal_state_space(self.temporal)

    def grid(self, delta: float | None = None):
        return build_grid(self.domain, self.delta if delta is None else delta, self.grid_layout)

    def operators(self, delta: float | None = None) -> SpatialOperators:
        return SpatialOperators(self.grid(delta), self.spatial)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = {"lower": list(self.domain.lower), "upper": list(self.domain.upper)}
        return d


def trial_streams(seed: int, trials: int) -> list[np.random.SeedSequence]:
    """Independent per-trial seed sequences keyed by trial index."""
    return [np.random.SeedSequence(seed, spawn_key=(i,)) for i in range(trials)]


def deployment_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(DEPLOY_STREAM,)))


# --- Monte Carlo -------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    """Per-step statistics of the filter's prior covariance across trials.

    Index ``k`` is time ``k dt``; entries refer to ``Sigma_{k|k-1}`` (the
    covariance before the update at that step), with ``k = 0`` the prior.
    """

    times: np.ndarray
    mean_diag: np.ndarray            # mean over trials of L(Sigma_k)
    mean_diag_se: np.ndarray
    field_var_mean: np.ndarray       # E[Pi_ii] per step and grid point
    trial_clarity: np.ndarray        # (trials, steps + 1) empirical averaged clarity
    trial_mean_diag: np.ndarray
    tail_field_var: np.ndarray       # (trials, tail steps, N_g)
    trial_rmse: np.ndarray | None
    seeds: list[str]

    @property
    def expected_clarity(self) -> np.ndarray:
        """Averaged clarity of the Monte Carlo mean ``E[Pi]`` at each step."""
        return np.mean(clarity_scalar(np.clip(self.field_var_mean, 0.0, None)), axis=1)

    def tail_expected_clarity(self) -> tuple[float, float]:
        """Tail time-average of the expected clarity and its jackknife SE."""
        V = self.tail_field_var
        T = V.shape[0]
        est = float(np.mean(clarity_scalar(np.clip(V.mean(axis=0), 0.0, None))))
        if T < 2:
            return est, float("nan")
        loo = (V.sum(axis=0)[None] - V) / (T - 1)
        reps = np.mean(clarity_scalar(np.clip(loo, 0.0, None)), axis=(1, 2))
        se = float(np.sqrt((T - 1) / T * np.sum((reps - reps.mean()) ** 2)))
        return est, se

    def tail_empirical_clarity(self) -> tuple[float, float]:
        """Tail time-average of per-trial averaged clarity, mean and SE."""
        start = self.times.size - self.tail_field_var.shape[1]
        per_trial = self.trial_clarity[:, start:].mean(axis=1)
        T = per_trial.size
        se = float(per_trial.std(ddof=1) / np.sqrt(T)) if T > 1 else float("nan")
        return float(per_trial.mean()), se


def tail_start(steps: int) -> int:
    return steps - int(round(TAIL_FRACTION * steps))


def run_monte_carlo(
    config: ExperimentConfig,
    ops: SpatialOperators | None = None,
    with_truth: bool = True,
) -> MonteCarloResult:
    """Run the grid filter for ``config.trials`` independent trials.

    Sensors are placed i.i.d. uniformly on grid points at every step. With
    ``with_truth`` a field is simulated and measured so the filter mean is
    exercised too; the covariance statistics do not depend on it.
    """
    ops = config.operators() if ops is None else ops
    real = config.realization
    n_g = ops.grid.count
    steps = config.steps
    pm = discretize_process(real, config.dt, n_g)
    S, C0 = ops.sqrt, real.C0
    k0 = tail_start(steps)

    T = config.trials
    var_sum = np.zeros((steps + 1, n_g))
    trial_q = np.empty((T, steps + 1))
    trial_L = np.empty((T, steps + 1))
    tail = np.empty((T, steps + 1 - k0, n_g))
    rmse = np.empty((T, steps + 1)) if with_truth else None
    streams = trial_streams(config.seed, T)

    for i, ss in enumerate(streams):
        place_ss, truth_ss, noise_ss = ss.spawn(3)
        place_rng = np.random.default_rng(place_ss)
        noise_rng = np.random.default_rng(noise_ss)
        if with_truth:
            _, field_true = simulate_truth(pm, S, C0, steps, np.random.default_rng(truth_ss))
        state = initial_state(pm)
        for k in range(steps + 1):
            v = field_variance(state.Sigma, S, C0)
            var_sum[k] += v
            trial_q[i, k] = np.mean(clarity_scalar(np.clip(v, 0.0, None)))
            trial_L[i, k] = mean_diag(state.Sigma)
            if k >= k0:
                tail[i, k - k0] = v
            idx = place_rng.integers(0, n_g, size=config.N_r)
            mm = measurement_model_on_grid(ops, idx, C0, config.sigma_m)
            if with_truth:
                rmse[i, k] = np.sqrt(np.mean((C0 * (S @ state.mean) - field_true[k]) ** 2))
                y = simulate_measurements(field_true[k], idx, config.sigma_m, noise_rng)
            else:
                y = np.zeros(config.N_r)
            state = kf_predict(kf_update(state, mm, y), pm)
        log.debug("trial %d done", i)

    se = trial_L.std(axis=0, ddof=1) / np.sqrt(T) if T > 1 else np.zeros(steps + 1)
    return MonteCarloResult(
        times=np.arange(steps + 1) * config.dt,
        mean_diag=trial_L.mean(axis=0),
        mean_diag_se=se,
        field_var_mean=var_sum / T,
        trial_clarity=trial_q,
        trial_mean_diag=trial_L,
        tail_field_var=tail,
        trial_rmse=rmse,
        seeds=[f"{config.seed}:{i}" for i in range(T)],
    )


# --- bounds ------------------------------------------------------------------------


def _deployment_set(config: ExperimentConfig, ops: SpatialOperators, rng):
    """Exact placement enumeration when it is no larger than ``deployments``."""
    n_g, N_r = ops.grid.count, config.N_r
    H_all = config.realization.C0 * ops.sqrt
    V = config.sigma_m ** 2 * np.eye(N_r)
    if n_g ** N_r <= config.deployments:
        idx = np.stack(np.meshgrid(*[np.arange(n_g)] * N_r, indexing="ij"), -1).reshape(-1, N_r)
        m = len(idx)
        return (H_all[idx], np.broadcast_to(V, (m, N_r, N_r)), np.full(m, 1.0 / m)), True
    M = config.deployments

    def at_step(_k):
        idx = rng.integers(0, n_g, size=(M, N_r))
        return H_all[idx], np.broadcast_to(V, (M, N_r, N_r)), np.full(M, 1.0 / M)

    return at_step, False


def discrete_bound(config: ExperimentConfig, ops: SpatialOperators | None = None) -> BoundTrajectory:
    """Mixture recursion on prior covariances over the placement law."""
    ops = config.operators() if ops is None else ops
    pm = discretize_process(config.realization, config.dt, ops.grid.count)
    deployments, _ = _deployment_set(config, ops, deployment_rng(config.seed))
    traj = discrete_bound_recursion(pm.discrete_system(), deployments, initial_state(pm).Sigma, config.steps)
    traj.times = traj.times * config.dt
    return traj


def continuous_bound(
    config: ExperimentConfig,
    ops: SpatialOperators | None = None,
    method: str = "auto",
) -> BoundTrajectory:
    """Bound ODE under the averaged information matrix, sampled at ``k dt``."""
    ops = config.operators() if ops is None else ops
    real = config.realization
    pm = discretize_process(real, config.dt, ops.grid.count)
    G_bar = averaged_information_closed_form(config.sensing, ops.Kgg, real.C0, ops.grid.count)
    return integrate_bound_ode(
        pm.continuous_system(),
        G_bar,
        initial_state(pm).Sigma,
        t_end=config.t_max,
        dt_ode=config.dt / config.ode_substeps,
        record_every=config.ode_substeps,
        method=method,
    )


@dataclass
class BoundComparison:
    dt: float
    times: np.ndarray
    discrete: np.ndarray
    continuous: np.ndarray

    @property
    def abs_error(self) -> np.ndarray:
        return self.discrete - self.continuous

    @property
    def rel_error(self) -> np.ndarray:
        return self.abs_error / self.discrete

    @property
    def terminal_rel_error(self) -> float:
        return float(self.rel_error[-1])


def compare_bounds(config: ExperimentConfig, dt_list, ops: SpatialOperators | None = None) -> list[BoundComparison]:
    """``L(Delta_k)`` against ``L(Delta(t))`` for each sampling period."""
    dts = [float(d) for d in dt_list]
    if not dts:
        raise InvalidValue("dt_list must be nonempty")
    ops = config.operators() if ops is None else ops
    out = []
    for dt in dts:
        cfg = replace(config, dt=dt)
        d = discrete_bound(cfg, ops)
        c = continuous_bound(cfg, ops)
        if d.times.shape != c.times.shape or not np.allclose(d.times, c.times):
            raise InvalidValue(f"bound time grids disagree at dt={dt}")
        out.append(BoundComparison(dt, d.times, d.mean_diag, c.mean_diag))
    return out


# --- grid and sensor-count studies ---------------------------------------------------


@dataclass
class GridStudyRow:
    theta: float
    delta: float
    delta_eff: float
    n_grid: int
    bound: float
    bound_half: float

    @property
    def difference(self) -> float:
        return abs(self.bound - self.bound_half)


def grid_convergence_study(theta_list, delta_list, config: ExperimentConfig) -> tuple[list[GridStudyRow], dict[float, object]]:
    """Steady-state bound per ``(theta, delta)`` and at ``delta / 2``.

    A spacing that does not divide the domain is replaced by the nearest one
    that does (``delta_eff``); the refined grid always uses ``delta_eff / 2``.

    Also returns, per theta, the grid-independent limit estimated from a
    reference grid at a quarter of the configured spacing.
    """
    thetas = [normalize_theta(float(t)) for t in theta_list]
    deltas = [float(d) for d in delta_list]
    if not thetas or not deltas:
        raise InvalidValue("theta_list and delta_list must be nonempty")
    real = config.realization
    spectra: dict[float, np.ndarray] = {}

    def spectrum(d):
        if d not in spectra:
            spectra[d] = config.operators(d).eigvals
        return spectra[d]

    rows = []
    for th in thetas:
        for d in deltas:
            de = snap_spacing(config.domain, d)
            w, wh = spectrum(de), spectrum(de / 2)
            rows.append(GridStudyRow(th, d, de, len(w), bound_from_theta_eigen(th, w, real),
                                     bound_from_theta_eigen(th, wh, real)))
    ref = config.operators(config.delta / 4)
    nu_ref = ref.nystrom_eigenvalues()
    limits = {
        th: grid_limit_clarity(th, nu_ref, real.C0, config.domain.measure, real.A0, real.q_c) for th in thetas
    }
    return rows, limits


@dataclass
class SensorRow:
    N_r: int
    expected_clarity: float
    expected_clarity_se: float
    empirical_clarity: float
    empirical_clarity_se: float
    bound: float


def clarity_vs_sensors(N_r_list, config: ExperimentConfig, trials: int | None = None, ops=None) -> list[SensorRow]:
    """Monte Carlo expected clarity next to the steady-state bound per fleet size."""
    trials = config.trials if trials is None else trials
    if trials < 30:
        log.warning("clarity_vs_sensors with %d < 30 trials", trials)
    ops = config.operators() if ops is None else ops
    rows = []
    for n in N_r_list:
        cfg = replace(config, N_r=int(n), trials=trials)
        t0 = time.perf_counter()
        mc = run_monte_carlo(cfg, ops, with_truth=False)
        q, se = mc.tail_expected_clarity()
        qe, see = mc.tail_empirical_clarity()
        b = bound_from_theta_eigen(cfg.sensing.theta, ops.eigvals, cfg.realization)
        log.info("N_r=%d: expected %.4f (se %.1e), bound %.4f, %.1fs", n, q, se, b, time.perf_counter() - t0)
        rows.append(SensorRow(int(n), q, se, qe, see, b))
    return rows


# --- artifacts -------------------------------------------------------------------------


def format_float(x) -> str:
    return FLOAT_FORMAT.format(float(x))


def write_csv(path: Path, header: list[str], rows) -> Path:
    """RFC 4180 CSV with a header row; floats carry 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def create_run_dir(base, label: str) -> Path:
    """Fresh timestamped directory under ``base``; never reuses an existing one."""
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    for n in range(1000):
        p = base / (f"{label}-{stamp}" + (f"-{n}" if n else ""))
        try:
            p.mkdir()
            return p
        except FileExistsError:
            continue
    raise FileExistsError(f"could not create a fresh run directory under {base}")


@dataclass
class RunManifest:
    """Run record written before results and finalized with checksums."""

    run_dir: Path
    command: str
    config: dict
    seeds: list[str] = field(default_factory=list)
    version: str = __version__
    started: str = ""
    wall_clock_s: float | None = None
    files: dict[str, str] = field(default_factory=dict)
    _t0: float = field(default=0.0, repr=False)

    NAME = "manifest.json"

    def begin(self) -> "RunManifest":
        self.started = datetime.now(timezone.utc).isoformat()
        self._t0 = time.perf_counter()
        self._write(status="running")
        return self

    def finish(self, outputs) -> "RunManifest":
        self.wall_clock_s = time.perf_counter() - self._t0
        self.files = {Path(p).name: sha256_file(p) for p in outputs}
        self._write(status="complete")
        return self

    def _write(self, status: str):
        payload = {
            "status": status,
            "command": self.command,
            "version": self.version,
            "started": self.started,
            "wall_clock_s": self.wall_clock_s,
            "config": self.config,
            "seeds": self.seeds,
            "files": self.files,
        }
        (Path(self.run_dir) / self.NAME).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    @staticmethod
    def verify(run_dir) -> dict[str, bool]:
        """Recompute every listed checksum; maps file name to match flag."""
        run_dir = Path(run_dir)
        payload = json.loads((run_dir / RunManifest.NAME).read_text(encoding="utf-8"))
        return {name: (run_dir / name).is_file() and sha256_file(run_dir / name) == digest
                for name, digest in payload["files"].items()}
