"""Discrete mixture bound against the continuous bound ODE for several sampling periods."""
import argparse

from fieldlimits.experiments import ExperimentConfig, compare_bounds, create_run_dir, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, nargs="+", default=[0.5, 0.2, 0.05])
    ap.add_argument("--n-r", type=int, default=1)
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()

    cfg = ExperimentConfig(N_r=args.n_r)
    res = compare_bounds(cfg, args.dt)
    out = create_run_dir(args.out, "compare-dt")
    rows = [(c.dt, t, d, v, (d - v) / d) for c in res for t, d, v in zip(c.times, c.discrete, c.continuous)]
    write_csv(out / "compare_dt.csv", ["dt", "t", "L_discrete", "L_continuous", "rel_error"], rows)
    for c in res:
        print(f"dt={c.dt:<6g} L_k={c.discrete[-1]:.5f} L(t)={c.continuous[-1]:.5f} rel={c.terminal_rel_error:+.4f}")
    print(f"written to {out}")


if __name__ == "__main__":
    main()
