"""Bias of in-sample power tuning as the unlabeled pool grows.

The coefficient is fitted on the same labeled rows it is applied to. With a
skewed outcome that reuse leaves a bias that does not vanish as the pool grows.

    python scripts/coverage_decay.py --trials 50000
"""
import argparse

from multippi.simulator import coverage_decay_demo


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--labeled", type=int, default=50)
    parser.add_argument("--trials", type=int, default=50000)
    parser.add_argument("--skew", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    curve = coverage_decay_demo(n_labeled=args.labeled, trials=args.trials, seed=args.seed, skew=args.skew)
    print(f"{'unlabeled':>10}{'bias':>11}{'std err':>10}{'bias/se':>9}")
    for p in curve:
        print(f"{p.n_unlabeled:>10}{p.bias:>11.5f}{p.std_error:>10.5f}{p.bias / p.std_error:>9.1f}")


if __name__ == "__main__":
    main()
