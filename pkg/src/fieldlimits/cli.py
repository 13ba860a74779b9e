"""Command-line entry point: ``fieldlimits <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_config
from .errors import ConfigError, NumericalError
from .experiments import (
    RunManifest,
    clarity_vs_sensors,
    compare_bounds,
    continuous_bound,
    create_run_dir,
    discrete_bound,
    format_float,
    grid_convergence_study,
    run_monte_carlo,
    write_csv,
)
from .limits import bound_from_theta_eigen, design_sensor_count, normalize_theta, sweep_noise_rate

log = logging.getLogger("fieldlimits")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return vals


def int_list(text: str) -> list[int]:
    vals = float_list(text)
    if any(v != int(v) or v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected comma-separated integers >= 1, got {text!r}")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key-value config file")
    common.add_argument("--out", help="base directory for run directories")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="fieldlimits", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo run of the grid filter")
    sub.add_parser("bound-discrete", parents=[common], help="mixture recursion bound over placements")
    sub.add_parser("bound-continuous", parents=[common], help="bound ODE under the averaged information")
    s = sub.add_parser("compare-bounds", parents=[common], help="discrete vs continuous bound per sampling period")
    s.add_argument("--dt-list", type=float_list, default=[0.5, 0.2, 0.05])
    s = sub.add_parser("clarity-limit", parents=[common], help="steady-state clarity bound")
    s.add_argument("--theta", type=float, help="sensing parameter (default: from config)")
    s = sub.add_parser("grid-study", parents=[common], help="steady-state bound vs grid spacing")
    s.add_argument("--theta-list", type=float_list, default=[5.0])
    s.add_argument("--delta-list", type=float_list, default=[2.0, 1.0, 0.5, 0.25])
    s = sub.add_parser("design-sensors", parents=[common], help="smallest fleet reaching a clarity target")
    s.add_argument("--target", type=float, required=True)
    s = sub.add_parser("sweep", parents=[common], help="bound over a noise / sampling-period lattice")
    s.add_argument("--sigma-m-list", type=float_list, default=[0.5, 1.0, 2.0, 4.0])
    s.add_argument("--dt-list", type=float_list, default=[0.01, 0.05, 0.1, 0.5])
    s = sub.add_parser("clarity-vs-sensors", parents=[common], help="Monte Carlo clarity and bound per fleet size")
    s.add_argument("--nr-list", type=int_list, default=[1, 3, 7, 21])
    return p


def _simulate(cfg, args, out):
    mc = run_monte_carlo(cfg)
    rows = zip(range(mc.times.size), mc.times, mc.mean_diag, mc.mean_diag_se, mc.expected_clarity,
               mc.trial_clarity.mean(axis=0), mc.trial_rmse.mean(axis=0))
    files = [write_csv(out / "simulate.csv",
                       ["k", "t", "mean_diag", "mean_diag_se", "expected_clarity", "empirical_clarity", "rmse"], rows)]
    q, se = mc.tail_expected_clarity()
    files.append(write_csv(out / "summary.csv", ["N_r", "expected_clarity_tail", "expected_clarity_se"], [(cfg.N_r, q, se)]))
    return files, mc.seeds


def _bound_discrete(cfg, args, out):
    b = discrete_bound(cfg)
    rows = zip(range(b.times.size), b.times, b.mean_diag, b.mixture_se)
    return [write_csv(out / "bound_discrete.csv", ["k", "t", "mean_diag", "mixture_se"], rows)], []


def _bound_continuous(cfg, args, out):
    b = continuous_bound(cfg)
    rows = zip(range(b.times.size), b.times, b.mean_diag)
    return [write_csv(out / "bound_continuous.csv", ["k", "t", "mean_diag"], rows)], []


def _compare(cfg, args, out):
    res = compare_bounds(cfg, args.dt_list)
    rows = [(c.dt, k, t, d, v, d - v, (d - v) / d)
            for c in res for k, (t, d, v) in enumerate(zip(c.times, c.discrete, c.continuous))]
    files = [write_csv(out / "compare_bounds.csv",
                       ["dt", "k", "t", "L_discrete", "L_continuous", "abs_error", "rel_error"], rows)]
    files.append(write_csv(out / "compare_bounds_terminal.csv", ["dt", "terminal_rel_error"],
                           [(c.dt, c.terminal_rel_error) for c in res]))
    for c in res:
        print(f"dt={format_float(c.dt)} terminal_rel_error={c.terminal_rel_error:.6f}")
    return files, []


def _clarity_limit(cfg, args, out):
    theta = normalize_theta(cfg.sensing.theta if args.theta is None else args.theta)
    ops = cfg.operators()
    q = bound_from_theta_eigen(theta, ops.eigvals, cfg.realization)
    print(f"theta={format_float(theta)} bound={q:.6f}")
    return [write_csv(out / "clarity_limit.csv", ["theta", "delta", "n_grid", "bound"],
                      [(theta, cfg.delta, ops.grid.count, q)])], []


def _grid_study(cfg, args, out):
    rows, limits = grid_convergence_study(args.theta_list, args.delta_list, cfg)
    files = [write_csv(out / "grid_study.csv", ["theta", "delta", "delta_eff", "n_grid", "bound", "bound_half", "difference"],
                       [(r.theta, r.delta, r.delta_eff, r.n_grid, r.bound, r.bound_half, r.difference) for r in rows])]
    files.append(write_csv(out / "grid_limit.csv", ["theta", "limit", "limit_lower", "n_terms", "tail_bound"],
                           [(th, g.value, g.lower, g.n_terms, g.tail_bound) for th, g in limits.items()]))
    return files, []


def _design(cfg, args, out):
    ops = cfg.operators()
    res = design_sensor_count(args.target, cfg.sensing, ops.grid, cfg.spatial, cfg.realization, ops=ops)
    print(f"N_r={res.N_r_min} bound={res.achieved_bound:.6f}")
    files = [write_csv(out / "design.csv", ["q_target", "N_r_min", "achieved_bound"],
                       [(res.q_target, res.N_r_min, res.achieved_bound)])]
    files.append(write_csv(out / "design_trace.csv", ["N_r", "bound"], res.trace))
    return files, []


def _sweep(cfg, args, out):
    ops = cfg.operators()
    sw = sweep_noise_rate(cfg.N_r, args.sigma_m_list, args.dt_list, ops.grid, cfg.spatial, cfg.realization, ops=ops)
    rows = [(sw.sigma_m[i], sw.dt[j], sw.theta[i, j], sw.clarity[i, j])
            for i in range(sw.sigma_m.size) for j in range(sw.dt.size)]
    return [write_csv(out / "sweep.csv", ["sigma_m", "dt", "theta", "bound"], rows)], []


def _clarity_vs_sensors(cfg, args, out):
    rows = clarity_vs_sensors(args.nr_list, cfg)
    return [write_csv(out / "clarity_vs_sensors.csv",
                      ["N_r", "expected_clarity", "expected_clarity_se", "empirical_clarity", "empirical_clarity_se", "bound"],
                      [(r.N_r, r.expected_clarity, r.expected_clarity_se, r.empirical_clarity, r.empirical_clarity_se, r.bound)
                       for r in rows])], [f"{cfg.seed}:{i}" for i in range(cfg.trials)]


HANDLERS = {
    "simulate": _simulate,
    "bound-discrete": _bound_discrete,
    "bound-continuous": _bound_continuous,
    "compare-bounds": _compare,
    "clarity-limit": _clarity_limit,
    "grid-study": _grid_study,
    "design-sensors": _design,
    "sweep": _sweep,
    "clarity-vs-sensors": _clarity_vs_sensors,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, args.set, seed=args.seed, out_dir=args.out)
        out = create_run_dir(cfg.out_dir, args.command)
        manifest = RunManifest(run_dir=out, command=" ".join(sys.argv[:1] + list(argv or sys.argv[1:])),
                               config=cfg.to_dict())
        manifest.config["cli"] = {k: v for k, v in vars(args).items() if k not in ("config", "set", "verbose")}
        manifest.begin()
        files, seeds = HANDLERS[args.command](cfg, args, out)
        manifest.seeds = seeds
        manifest.finish(files)
        print(f"run directory: {out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
