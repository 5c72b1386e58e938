"""Run a budget grid from an experiment config and print a readable table.

    python scripts/run_grid.py scripts/configs/gaussian_k3.json --trials 2000
"""
import argparse
import os
import time

from multippi.model import dumps
from multippi.simulator import load_experiment, metrics_csv, run_grid


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--csv", help="also write the metrics table here")
    parser.add_argument("--json", help="also write the rows as JSON here")
    args = parser.parse_args()

    with open(args.config) as fh:
        source, config = load_experiment(fh.read(), os.path.dirname(os.path.abspath(args.config)))
    overrides = {k: v for k, v in (("trials", args.trials), ("seed", args.seed)) if v is not None}
    if overrides:
        config = type(config)(**{**config.__dict__, **overrides})

    start = time.perf_counter()
    rows = run_grid(source, config)
    elapsed = time.perf_counter() - start

    print(f"{'method':<22}{'budget':>10}{'coverage':>10}{'width':>9}{'mse':>9}")
    for r in sorted(rows, key=lambda r: (r.budget, r.method)):
        print(f"{r.method:<22}{r.budget:>10.1f}{r.coverage:>10.4f}{r.ci_width_fraction:>9.4f}{r.mse_fraction:>9.4f}")
    print(f"\n{config.trials} trials per cell, {elapsed:.1f}s")

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(metrics_csv(rows))
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(dumps([r.to_dict() for r in rows]))


if __name__ == "__main__":
    main()
