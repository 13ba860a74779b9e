"""Clarity vs fleet size: design search, steady-state bound and Monte Carlo."""
import argparse
import logging

from fieldlimits.experiments import ExperimentConfig, clarity_vs_sensors, create_run_dir, write_csv
from fieldlimits.limits import design_sensor_count

TARGETS = (0.5, 0.6, 0.7, 0.8, 0.9)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-large", action="store_true", help="leave out the largest fleet in the Monte Carlo")
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig(trials=args.trials, seed=args.seed)
    ops = cfg.operators()
    design = [design_sensor_count(q, cfg.sensing, ops.grid, cfg.spatial, cfg.realization, ops=ops) for q in TARGETS]
    fleets = [d.N_r_min for d in design]
    mc = clarity_vs_sensors(fleets[:-1] if args.skip_large else fleets, cfg, ops=ops)
    out = create_run_dir(args.out, "fleet-size")
    rows = []
    print(f"{'target':>7} {'N_r':>5} {'bound':>8} {'E[Pi] clarity':>14} {'se':>8}")
    for d in design:
        r = next((r for r in mc if r.N_r == d.N_r_min), None)
        q, se = (r.expected_clarity, r.expected_clarity_se) if r else (float("nan"), float("nan"))
        rows.append((d.q_target, d.N_r_min, d.achieved_bound, q, se))
        print(f"{d.q_target:7.2f} {d.N_r_min:5d} {d.achieved_bound:8.4f} {q:14.4f} {se:8.1e}")
    write_csv(out / "fleet_size.csv", ["q_target", "N_r", "bound", "expected_clarity", "expected_clarity_se"], rows)
    print(f"written to {out}")


if __name__ == "__main__":
    main()
