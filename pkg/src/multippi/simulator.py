"""Synthetic populations, cost builders and the Monte Carlo harness.

Random streams are keyed by ``(seed, trial, budget slot, subset bitmask)``
so that every method sees the same labeled rows in a trial and the same
draws for any subset it shares with another method at a given budget.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import allocator
from .covariance import estimate_covariance, read_samples_csv
from .errors import ExhaustedEmpiricalRows, InvalidCovariance, InvalidSubset, TooFewSamples
from .estimators import (
    CASCADE_FAMILY,
    PipelineConfig,
    cascade_estimate,
    cascade_lambdas,
    classical_estimate,
    pipeline_run,
    plan_pipeline,
    ppi_estimate,
    ppi_pp_scalar,
    ppi_pp_vector,
)
from .model import CostModel, CovarianceMatrix, SampleBatch, Subset, SubsetFamily, TargetSpec

SNAP_REL = 1e-9


# --------------------------------------------------------------------------
# random streams


def subset_mask(subset: Sequence[int]) -> int:
    return sum(1 << (i - 1) for i in subset)


def stream(seed: int, trial: int, slot: int = 0, tag: int = 0) -> np.random.Generator:
    """Independent generator for one (trial, budget slot, subset) cell."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial), int(slot), int(tag)]))


# --------------------------------------------------------------------------
# populations


@dataclass(frozen=True, eq=False)
class PopulationSource:
    """Gaussian ``N(mean, cov)`` or the empirical distribution of ``rows``."""

    kind: str
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    rows: Optional[np.ndarray] = None
    replace: bool = True
    _factors: Dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            cov = CovarianceMatrix(self.cov).entries
            mean = np.asarray(self.mean, dtype=float)
            if mean.shape != (cov.shape[0],):
                raise InvalidCovariance("mean and covariance disagree on k")
            object.__setattr__(self, "cov", cov)
            object.__setattr__(self, "mean", mean)
        elif self.kind == "empirical":
            rows = np.asarray(self.rows, dtype=float)
            if rows.ndim != 2 or rows.shape[0] < 1:
                raise TooFewSamples("empirical source needs a 2-D array of rows")
            object.__setattr__(self, "rows", rows)
        else:
            raise ValueError(f"unknown population kind {self.kind!r}")

    @classmethod
    def gaussian(cls, mean, cov) -> "PopulationSource":
        return cls("gaussian", mean=mean, cov=cov)

    @classmethod
    def empirical(cls, rows, replace: bool = True) -> "PopulationSource":
        return cls("empirical", rows=rows, replace=replace)

    @property
    def k(self) -> int:
        return self.mean.size if self.kind == "gaussian" else self.rows.shape[1]

    def population_mean(self) -> np.ndarray:
        return self.mean if self.kind == "gaussian" else self.rows.mean(axis=0)

    def population_cov(self) -> np.ndarray:
        if self.kind == "gaussian":
            return self.cov
        return np.cov(self.rows, rowvar=False, ddof=0)

    def theta(self, target: TargetSpec) -> float:
        return float(target.a @ self.population_mean())

    def _factor(self, subset: Subset) -> np.ndarray:
        f = self._factors.get(subset)
        if f is None:
            idx = np.asarray(subset) - 1
            block = self.cov[np.ix_(idx, idx)]
            try:
                f = np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                w, v = np.linalg.eigh(block)
                f = v * np.sqrt(np.clip(w, 0.0, None))
            self._factors[subset] = f
        return f

    def draw(self, rng: np.random.Generator, subset: Sequence[int], n: int) -> np.ndarray:
        """``n`` rows of the coordinates in ``subset``; shorter draws from the
        same generator state are prefixes of longer ones."""
        subset = tuple(subset)
        idx = np.asarray(subset) - 1
        if self.kind == "gaussian":
            z = rng.standard_normal((n, len(subset)))
            return z @ self._factor(subset).T + self.mean[idx]
        total = self.rows.shape[0]
        if self.replace:
            pick = rng.integers(0, total, size=n)
        else:
            if n > total:
                raise ExhaustedEmpiricalRows(f"requested {n} rows from a population of {total}")
            pick = rng.permutation(total)[:n]
        return self.rows[np.ix_(pick, idx)]

    def draw_full(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.draw(rng, tuple(range(1, self.k + 1)), n)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}
        return {"kind": "empirical", "rows": self.rows.tolist(), "replace": self.replace}

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "PopulationSource":
        kind = data.get("kind")
        if kind == "gaussian":
            return cls.gaussian(data["mean"], data["cov"])
        if kind == "empirical":
            if "rows" in data:
                rows = data["rows"]
            else:
                with open(os.path.join(base_dir, data["path"])) as fh:
                    rows = read_samples_csv(fh.read())[1]
            return cls.empirical(rows, replace=bool(data.get("replace", True)))
        raise ValueError(f"unknown population kind {kind!r}")


# --------------------------------------------------------------------------
# cost builders


def _model_subsets(k: int, family: str) -> List[Subset]:
    if family == "full":
        return [c for r in range(1, k) for c in itertools.combinations(range(2, k + 1), r)]
    if family == "restricted":
        return list(allocator.restricted_family(k).subsets[1:])
    raise ValueError(f"unknown family {family!r}")


def _with_labeled(k, subsets, money, budget, labeled_cap) -> CostModel:
    if labeled_cap is None:
        return CostModel(SubsetFamily(k, tuple(subsets)), np.asarray(money), [float(budget)])
    full = tuple(range(1, k + 1))
    costs = np.zeros((len(subsets) + 1, 2))
    costs[0, 1] = 1.0
    costs[1:, 0] = money
    return CostModel(SubsetFamily(k, (full,) + tuple(subsets)), costs, [float(budget), float(labeled_cap)])


def cost_additive(per_model_costs: Sequence[float], budget: float = 1.0, labeled_cap: Optional[int] = None, family: str = "full") -> CostModel:
    """Querying several models together costs the sum of their prices.

    Models are variables ``2..k`` with ``k = 1 + len(per_model_costs)``.
    Without ``labeled_cap`` the family holds model subsets only. With it, the
    all-variables subset is added at zero money cost plus a second budget row
    limiting it to ``labeled_cap`` reused rows.
    """
    prices = np.asarray(per_model_costs, dtype=float)
    k = prices.size + 1
    subsets = _model_subsets(k, family)
    money = [float(sum(prices[i - 2] for i in s)) for s in subsets]
    return _with_labeled(k, subsets, money, budget, labeled_cap)


def cost_cascading(input_rate: float, output_rate: float, tiers: Sequence[float], budget: float = 1.0, labeled_cap: Optional[int] = None, family: str = "full") -> CostModel:
    """Models share one prompt: a subset pays input for every tier and output
    for its largest tier, ``output_rate * max(S) + input_rate * sum(S)``."""
    tiers = np.asarray(tiers, dtype=float)
    k = tiers.size + 1
    subsets = _model_subsets(k, family)
    money = []
    for s in subsets:
        sizes = [tiers[i - 2] for i in s]
        money.append(float(output_rate * max(sizes) + input_rate * sum(sizes)))
    return _with_labeled(k, subsets, money, budget, labeled_cap)


def cost_model_from_dict(data: dict, budget: float = 1.0, labeled_cap: Optional[int] = None, family: str = "full") -> CostModel:
    builder = data.get("builder", "additive")
    if builder == "additive":
        return cost_additive(data["costs"], budget, labeled_cap, family)
    if builder == "cascading":
        return cost_cascading(data["input_rate"], data["output_rate"], data["tiers"], budget, labeled_cap, family)
    raise ValueError(f"unknown cost builder {builder!r}")


def _affordable(budget: float, cost: float) -> int:
    ratio = budget / cost
    near = round(ratio)
    return int(near) if abs(ratio - near) <= SNAP_REL * max(1.0, ratio) else int(math.floor(ratio))


# --------------------------------------------------------------------------
# trials


def draw_trial(source: PopulationSource, allocation, labeled_rows: np.ndarray, labeled_subset: Subset, seed: int, trial: int = 0, slot: int = 0):
    """Batches for ``allocation``: the labeled subset reuses the first rows of
    ``labeled_rows``; others are fresh draws from their own streams."""
    batches = []
    for s, n in allocation.items():
        if n <= 0:
            continue
        if tuple(s) == tuple(labeled_subset):
            rows = labeled_rows[:n][:, np.asarray(s) - 1]
        else:
            rows = source.draw(stream(seed, trial, slot + 1, subset_mask(s)), s, n)
        batches.append(SampleBatch(s, rows))
    return batches


@dataclass(frozen=True)
class MetricsRow:
    method: str
    budget: float
    coverage: float
    ci_width_fraction: float
    mse_fraction: float
    trials: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "budget": self.budget,
            "coverage": self.coverage,
            "ci_width_fraction": self.ci_width_fraction,
            "mse_fraction": self.mse_fraction,
            "trials": self.trials,
        }


METRIC_COLUMNS = ("method", "budget", "coverage", "ci_width_fraction", "mse_fraction", "trials")


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in rows:
        writer.writerow([r.method, repr(float(r.budget)), repr(r.coverage), repr(r.ci_width_fraction), repr(r.mse_fraction), r.trials])
    return buf.getvalue()


@dataclass(frozen=True)
class GridConfig:
    """Everything ``run_grid`` needs besides the population."""

    model_costs: dict
    budgets: Tuple[float, ...]
    methods: Tuple[str, ...] = ("classical", "ppi_pp:2", "ppi_pp_vector", "cascade", "multippi")
    trials: int = 20000
    n_labeled: int = 250
    alpha: float = 0.05
    seed: int = 0
    covariance_method: str = "ledoit_wolf"
    ci_width_mode: str = "ratio_of_means"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.ci_width_mode not in ("ratio_of_means", "mean_of_ratios"):
            raise ValueError(f"unknown ci_width_mode {self.ci_width_mode!r}")
        for m in self.methods:
            _method_kind(m)

    @classmethod
    def from_dict(cls, data: dict) -> "GridConfig":
        return cls(
            model_costs=dict(data["cost_model"]),
            budgets=tuple(float(b) for b in data["budgets"]),
            methods=tuple(data.get("methods", cls.methods)),
            trials=int(data.get("trials", 20000)),
            n_labeled=int(data.get("n_labeled", 250)),
            alpha=float(data.get("alpha", 0.05)),
            seed=int(data.get("seed", 0)),
            covariance_method=data.get("covariance_method", "ledoit_wolf"),
            ci_width_mode=data.get("ci_width_mode", "ratio_of_means"),
        )


def _method_kind(name: str):
    base, _, arg = name.partition(":")
    if base in ("ppi", "ppi_pp"):
        if not arg.isdigit() or int(arg) < 2:
            raise ValueError(f"method {name!r} needs a model index >= 2, e.g. {base}:2")
        return base, int(arg)
    if base in ("classical", "ppi_pp_vector", "cascade", "multippi", "multippi_restricted") and not arg:
        return base, None
    raise ValueError(f"unknown method {name!r}")


class _TrialContext:
    """Per-trial state shared by every method and budget."""

    def __init__(self, source, config: GridConfig, trial: int, k: int, models: dict):
        self.source = source
        self.config = config
        self.trial = trial
        self.k = k
        self.labeled = source.draw_full(stream(config.seed, trial), config.n_labeled)
        self._sigma = None
        self.models = models

    @property
    def sigma(self) -> CovarianceMatrix:
        if self._sigma is None:
            self._sigma = estimate_covariance(self.labeled, self.config.covariance_method)
        return self._sigma

    def draw(self, slot: int, subset: Subset, n: int) -> np.ndarray:
        return self.source.draw(stream(self.config.seed, self.trial, slot + 1, subset_mask(subset)), subset, n)


def _run_method(name: str, ctx: _TrialContext, slot: int, budget: float, cost_cache: dict):
    base, model = _method_kind(name)
    cfg = ctx.config
    lab = ctx.labeled
    alpha = cfg.alpha
    if base == "classical":
        return classical_estimate(lab[:, 0], alpha)
    if base in ("ppi", "ppi_pp"):
        if model > ctx.k:
            raise InvalidSubset(f"model index {model} exceeds k={ctx.k}")
        n_unl = _affordable(budget, cost_cache[(model,)])
        pair = lab[:, [0, model - 1]]
        if n_unl < 2:
            if base == "ppi":
                return classical_estimate(lab[:, 0], alpha)
            return ppi_pp_scalar(pair, np.zeros(0), alpha, lam=0.0, model=model)
        unl = ctx.draw(slot, (model,), n_unl)[:, 0]
        if base == "ppi":
            return ppi_estimate(pair, unl, alpha, model)
        return ppi_pp_scalar(pair, unl, alpha, model=model)
    if base == "ppi_pp_vector":
        models = tuple(range(2, ctx.k + 1))
        n_unl = _affordable(budget, cost_cache[models])
        if n_unl < 2:
            return ppi_pp_vector(lab, np.zeros((0, ctx.k - 1)), alpha, lam=np.zeros(ctx.k - 1))
        return ppi_pp_vector(lab, ctx.draw(slot, models, n_unl), alpha)
    if base == "cascade":
        if ctx.k != 3:
            raise InvalidSubset("the cascade baseline is defined for k = 3")
        pcfg = ctx.models.get(("cascade", budget))
        if pcfg is None:
            costs = np.array([[0.0, 1.0], [cost_cache[(2, 3)], 0.0], [cost_cache[(3,)], 0.0]])
            cm = CostModel(SubsetFamily(3, CASCADE_FAMILY), costs, [budget, float(cfg.n_labeled)])
            pcfg = PipelineConfig(cfg.n_labeled, cm, cfg.covariance_method, alpha, reuse_subset=(1, 2))
            ctx.models[("cascade", budget)] = pcfg
        alloc, weights, _ = plan_pipeline(ctx.sigma, pcfg)
        lam, lam_prime = cascade_lambdas(weights)
        n_lab = alloc[(1, 2)]
        mid = ctx.draw(slot, (2, 3), alloc[(2, 3)]) if alloc[(2, 3)] else np.zeros((0, 2))
        low = ctx.draw(slot, (3,), alloc[(3,)])[:, 0] if alloc[(3,)] else np.zeros(0)
        return cascade_estimate(lab[:n_lab, :2], mid, low, lam, lam_prime, alpha)
    family = "restricted" if base == "multippi_restricted" else "full"
    key = (family, budget)
    pcfg = ctx.models.get(key)
    if pcfg is None:
        cm = cost_model_from_dict(cfg.model_costs, budget, cfg.n_labeled, family)
        pcfg = PipelineConfig(cfg.n_labeled, cm, cfg.covariance_method, alpha, family=family)
        ctx.models[key] = pcfg
    return pipeline_run(lab, pcfg, lambda s, n: ctx.draw(slot, s, n), sigma_hat=ctx.sigma)


def run_trials(source: PopulationSource, config: GridConfig, target: Optional[TargetSpec] = None, trials: Optional[range] = None):
    """Raw per-trial results: dict method -> (points, half_widths) arrays of
    shape (budgets, trials)."""
    k = source.k
    target = target or TargetSpec.unit(k)
    trials = trials if trials is not None else range(config.trials)
    base_cm = cost_model_from_dict(config.model_costs)
    if base_cm.k != k:
        raise InvalidSubset(f"cost model describes k={base_cm.k}, population has k={k}")
    cost_cache = {s: float(base_cm.cost(s)[0]) for s in base_cm.family}
    nb, nt = len(config.budgets), len(trials)
    points = {m: np.zeros((nb, nt)) for m in config.methods}
    halves = {m: np.zeros((nb, nt)) for m in config.methods}
    models: dict = {}
    for t_pos, trial in enumerate(trials):
        ctx = _TrialContext(source, config, trial, k, models)
        fixed = {}
        for slot, budget in enumerate(config.budgets):
            for m in config.methods:
                if m == "classical" and "classical" in fixed:
                    rep = fixed["classical"]
                else:
                    rep = _run_method(m, ctx, slot, budget, cost_cache)
                    if m == "classical":
                        fixed[m] = rep
                points[m][slot, t_pos] = rep.point
                halves[m][slot, t_pos] = rep.half_width
    return points, halves


def summarize(points, halves, config: GridConfig, theta: float, reference: str = "classical") -> List[MetricsRow]:
    """Coverage and classical-relative CI width and MSE per (method, budget)."""
    ref_p, ref_h = points[reference], halves[reference]
    rows = []
    for m in config.methods:
        p, h = points[m], halves[m]
        for slot, budget in enumerate(config.budgets):
            err2 = (p[slot] - theta) ** 2
            cover = np.abs(p[slot] - theta) <= h[slot]
            w2, w2_ref = (2 * h[slot]) ** 2, (2 * ref_h[slot]) ** 2
            if config.ci_width_mode == "ratio_of_means":
                width = float(np.mean(w2) / np.mean(w2_ref))
            else:
                width = float(np.mean(w2 / w2_ref))
            mse = float(np.mean(err2) / np.mean((ref_p[slot] - theta) ** 2))
            rows.append(MetricsRow(m, float(budget), float(np.mean(cover)), width, mse, p.shape[1]))
    return rows


def run_grid(source: PopulationSource, config: GridConfig, target: Optional[TargetSpec] = None) -> List[MetricsRow]:
    """Monte Carlo metrics for every (method, budget), normalized by classical sampling."""
    target = target or TargetSpec.unit(source.k)
    methods = config.methods
    if "classical" not in methods:
        config = GridConfig(**{**config.__dict__, "methods": ("classical",) + tuple(methods)})
    points, halves = run_trials(source, config, target)
    rows = summarize(points, halves, config, source.theta(target))
    return [r for r in rows if r.method in methods]


# --------------------------------------------------------------------------
# bias of the reused-data power tuning


@dataclass(frozen=True)
class BiasPoint:
    n_unlabeled: int
    bias: float
    std_error: float


def coverage_decay_demo(n_labeled: int = 50, unlabeled_grid: Sequence[int] = (50, 100, 300, 1000, 3000, 10000), trials: int = 50000, seed: int = 0, skew: float = 1.0, chunk: int = 5000) -> List[BiasPoint]:
    """Bias of the single-proxy power-tuned estimator when its coefficient is
    fitted on the same labeled rows it averages.

    Population: ``X2 = Z`` and ``X1 = Z + skew * (Z^2 - 1)`` with Z standard
    normal, so the target mean is 0. With ``skew = 0`` the pair is Gaussian
    and the bias vanishes. The unlabeled proxy mean for nested sizes is
    built from exact Gaussian block sums, so one draw per grid gap suffices.
    """
    grid = np.asarray(sorted(int(g) for g in unlabeled_grid))
    if grid[0] < 1:
        raise ValueError("unlabeled sizes must be positive")
    n = int(n_labeled)
    if n < 2:
        raise TooFewSamples("need at least 2 labeled rows")
    total = np.zeros(grid.size)
    total_sq = np.zeros(grid.size)
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        rng = stream(seed, start, 0, 0)
        z = rng.standard_normal((m, n))
        x1 = z + skew * (z * z - 1.0)
        zc = z - z.mean(axis=1, keepdims=True)
        var = np.einsum("ij,ij->i", zc, zc) / (n - 1)
        cov = np.einsum("ij,ij->i", x1 - x1.mean(axis=1, keepdims=True), zc) / (n - 1)
        ratio = np.where(var > 0, cov / np.where(var > 0, var, 1.0), 0.0)
        gaps = np.diff(np.concatenate([[0], grid]))
        sums = np.cumsum(rng.standard_normal((m, grid.size)) * np.sqrt(gaps), axis=1)
        for g, big_n in enumerate(grid):
            lam = big_n / (n + big_n) * ratio
            est = (x1 - lam[:, None] * z).mean(axis=1) + lam * sums[:, g] / big_n
            total[g] += est.sum()
            total_sq[g] += (est * est).sum()
    mean = total / trials
    sd = np.sqrt(np.maximum(total_sq / trials - mean**2, 0.0))
    return [BiasPoint(int(g), float(b), float(s / np.sqrt(trials))) for g, b, s in zip(grid, mean, sd)]


def load_experiment(text: str, base_dir: str = "."):
    """Parse an experiment config JSON into ``(source, GridConfig)``."""
    data = json.loads(text)
    source = PopulationSource.from_dict(data["source"], base_dir)
    return source, GridConfig.from_dict(data)
