"""Steady-state clarity bound over a measurement-noise / sampling-period lattice."""
import argparse

import numpy as np

from fieldlimits.experiments import ExperimentConfig, create_run_dir, write_csv
from fieldlimits.limits import sweep_noise_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-r", type=int, default=7)
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()

    cfg = ExperimentConfig()
    ops = cfg.operators()
    sigma_m = np.geomspace(0.25, 8.0, 11)
    dt = np.geomspace(0.005, 1.0, 11)
    sw = sweep_noise_rate(args.n_r, sigma_m, dt, ops.grid, cfg.spatial, cfg.realization, ops=ops)
    out = create_run_dir(args.out, "noise-rate")
    write_csv(out / "noise_rate.csv", ["sigma_m", "dt", "theta", "bound"],
              [(sw.sigma_m[i], sw.dt[j], sw.theta[i, j], sw.clarity[i, j])
               for i in range(sigma_m.size) for j in range(dt.size)])
    print("rows: sigma_m, columns: dt")
    print("        " + " ".join(f"{h:6.3f}" for h in dt))
    for i, s in enumerate(sigma_m):
        print(f"{s:7.3f} " + " ".join(f"{q:6.3f}" for q in sw.clarity[i]))
    print(f"written to {out}")


if __name__ == "__main__":
    main()
