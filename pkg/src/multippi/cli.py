"""Command-line interface: ``multippi {covariance,allocate,estimate,simulate}``.

Exit codes: 0 on success, 1 on invalid input, 2 when a solver fails to
converge. Failures print ``{"error": code, "detail": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from . import allocator
from .covariance import empirical_covariance, ledoit_wolf, read_samples_csv
from .errors import CountMismatch, MissingSubset, MultiPPIError
from .estimators import PipelineConfig, pipeline_run
from .model import CostModel, CovarianceMatrix, TargetSpec, dumps, subset_key
from .simulator import PopulationSource, load_experiment, metrics_csv, run_grid, stream, subset_mask


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path) as fh:
        return fh.read()


def _write(text: str, path: Optional[str]):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load_covariance(path: str) -> CovarianceMatrix:
    text = _read(path)
    if text.lstrip().startswith("["):
        return CovarianceMatrix.from_json(text)
    return CovarianceMatrix.from_csv(text)


def _parse_target(text: Optional[str], k: int) -> TargetSpec:
    if text is None:
        return TargetSpec.unit(k)
    values = [float(v) for v in text.split(",")]
    if len(values) != k:
        raise CountMismatch(f"target has {len(values)} entries, expected {k}")
    return TargetSpec(values)


def _override_budgets(cm: CostModel, budgets) -> CostModel:
    if not budgets:
        return cm
    if len(budgets) != cm.m:
        raise CountMismatch(f"{len(budgets)} budget overrides for {cm.m} budget rows")
    return cm.with_budgets(budgets)


def cmd_covariance(args) -> int:
    _, data = read_samples_csv(_read(args.data))
    if args.method == "ledoit_wolf":
        sigma = ledoit_wolf(data).sigma_lw
    else:
        sigma = empirical_covariance(data, args.divisor)
    _write(sigma.to_csv() if args.format == "csv" else sigma.to_json(), args.output)
    return 0


def cmd_allocate(args) -> int:
    sigma = _load_covariance(args.covariance)
    cm = _override_budgets(CostModel.from_json(_read(args.cost_model)), args.budget)
    target = _parse_target(args.target, sigma.k)
    route = args.route
    if route == "single" or (route == "auto" and cm.m == 1):
        socp, plan = allocator.solve_single_budget(sigma, target, cm)
        out = {**plan.to_dict(), "dual": socp.to_dict()}
    else:
        out = allocator.solve_multi_budget(sigma, target, cm).to_dict()
    _write(dumps(out), args.output)
    return 0


class _DirectoryBatches:
    """Serve batch ``I`` from ``<dir>/<I>.csv`` (e.g. ``2,3.csv``), first n rows."""

    def __init__(self, directory: str):
        self.directory = directory

    def __call__(self, subset, n):
        path = os.path.join(self.directory, subset_key(subset) + ".csv")
        if not os.path.exists(path):
            raise MissingSubset(f"allocation needs batch file {path}")
        _, rows = read_samples_csv(_read(path))
        if rows.shape[1] != len(subset):
            raise CountMismatch(f"{path} has {rows.shape[1]} columns, subset {subset_key(subset)} needs {len(subset)}")
        if rows.shape[0] < n:
            raise CountMismatch(f"{path} has {rows.shape[0]} rows, allocation needs {n}")
        return rows[:n]


def cmd_estimate(args) -> int:
    _, labeled = read_samples_csv(_read(args.labeled))
    cm = _override_budgets(CostModel.from_json(_read(args.cost_model)), args.budget)
    target = _parse_target(args.target, cm.k)
    n_lab = args.labeled_count or labeled.shape[0]
    config = PipelineConfig(n_lab, cm, args.method, args.alpha, target=target, empirical_divisor=args.divisor)
    if args.batch_dir:
        draw = _DirectoryBatches(args.batch_dir)
    else:
        source = PopulationSource.from_dict(json.loads(_read(args.source)), os.path.dirname(os.path.abspath(args.source)))

        def draw(subset, n):
            return source.draw(stream(args.seed, 0, 1, subset_mask(subset)), subset, n)

    report = pipeline_run(labeled[:n_lab], config, draw)
    _write(report.to_json(), args.output)
    return 0


def cmd_simulate(args) -> int:
    source, config = load_experiment(_read(args.config), os.path.dirname(os.path.abspath(args.config)))
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = type(config)(**{**config.__dict__, **overrides})
    rows = run_grid(source, config)
    if args.format == "json":
        _write(dumps([r.to_dict() for r in rows]), args.output)
    else:
        _write(metrics_csv(rows), args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multippi", description="Budget-optimal multi-model estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("covariance", help="estimate a covariance matrix from a labeled CSV")
    p.add_argument("data", help="CSV with a header row, one sample per row")
    p.add_argument("--method", choices=["ledoit_wolf", "empirical"], default="ledoit_wolf")
    p.add_argument("--divisor", choices=["N", "N-1"], default="N-1", help="empirical estimator only")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_covariance)

    p = sub.add_parser("allocate", help="solve for the optimal allocation and weights")
    p.add_argument("--covariance", required=True, help="covariance as JSON array-of-arrays or headerless CSV")
    p.add_argument("--cost-model", required=True, help="cost model JSON")
    p.add_argument("--target", help="comma-separated coefficients; default selects variable 1")
    p.add_argument("--budget", type=float, action="append", help="override budgets (repeat once per row)")
    p.add_argument("--route", choices=["auto", "single", "multi"], default="auto")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("estimate", help="run the estimate-allocate-estimate procedure")
    p.add_argument("--labeled", required=True, help="fully labeled CSV (header row)")
    p.add_argument("--cost-model", required=True, help="cost model JSON with the all-variables subset and a cap row")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--batch-dir", help="directory of per-subset CSVs named like '2,3.csv'")
    src.add_argument("--source", help="population JSON to simulate batches from")
    p.add_argument("--labeled-count", type=int, help="use only the first N labeled rows")
    p.add_argument("--target", help="comma-separated coefficients; default selects variable 1")
    p.add_argument("--budget", type=float, action="append", help="override budgets (repeat once per row)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--method", choices=["ledoit_wolf", "empirical"], default="ledoit_wolf")
    p.add_argument("--divisor", choices=["N", "N-1"], default="N-1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo metrics over a budget grid")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)
    return parser


def _fail(code: str, detail: str, exit_code: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "detail": detail}) + "\n")
    return exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MultiPPIError as exc:
        return _fail(exc.code, str(exc.detail), exc.exit_code)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        return _fail("invalid_input", f"{type(exc).__name__}: {exc}", 1)


if __name__ == "__main__":
    sys.exit(main())
