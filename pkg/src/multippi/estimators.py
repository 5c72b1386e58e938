"""Point estimates and confidence intervals.

Every estimator here is a sum of per-batch sample means of scalar
projections ``lambda_I . X_I``. The baselines are written out as their own
formulas; with matching weights the general estimator reproduces them
exactly, because projections are accumulated column by column in the same
order the formulas use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import allocator
from .covariance import estimate_covariance
from .errors import CountMismatch, DegenerateBatch, InvalidSubset, MissingSubset, TooFewSamples
from .model import (
    Allocation,
    CostModel,
    CovarianceMatrix,
    SampleBatch,
    Subset,
    SubsetFamily,
    TargetSpec,
    WeightScheme,
    dumps,
    subset_key,
)


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def project(rows: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``rows @ lam`` accumulated left to right, one column at a time."""
    out = rows[:, 0] * lam[0]
    for j in range(1, lam.size):
        out = out + rows[:, j] * lam[j]
    return out


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class SubsetSummary:
    subset: Subset
    n: int
    mean: float
    var: float

    def to_dict(self) -> dict:
        return {"subset": subset_key(self.subset), "n": self.n, "mean": self.mean, "var": self.var}


@dataclass(frozen=True, eq=False)
class EstimateReport:
    point: float
    variance_estimate: float
    alpha: float
    interval: Tuple[float, float]
    per_subset: Tuple[SubsetSummary, ...]
    allocation: Allocation
    spend: Optional[np.ndarray] = None
    method: str = "multippi"
    extras: Mapping = field(default_factory=dict)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.interval[1] - self.interval[0])

    def covers(self, value: float) -> bool:
        return self.interval[0] <= value <= self.interval[1]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "point": float(self.point),
            "variance": float(self.variance_estimate),
            "alpha": float(self.alpha),
            "interval": [float(self.interval[0]), float(self.interval[1])],
            "per_subset": [s.to_dict() for s in self.per_subset],
            "allocation": self.allocation.to_dict(),
            "spend": None if self.spend is None else [float(v) for v in self.spend],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _report(terms, alpha, method, allocation=None, spend=None, extras=None) -> EstimateReport:
    """Build a report from ``(subset, projections, weight_is_zero)`` terms.

    The point is the running sum of the projection means in term order.
    """
    alpha = _check_alpha(alpha)
    point = 0.0
    variance = 0.0
    summaries = []
    for subset, proj, inert in terms:
        n = proj.size
        if n == 0:
            if not inert:
                raise DegenerateBatch(f"batch {subset_key(subset)} is empty but carries weight")
            continue
        mean = float(np.mean(proj))
        point = point + mean
        if n < 2:
            if not inert:
                raise DegenerateBatch(f"batch {subset_key(subset)} has a single row; need 2 for a variance")
            var = 0.0
        else:
            var = float(np.var(proj, ddof=1))
        variance += var / n
        summaries.append(SubsetSummary(tuple(subset), int(n), mean, var))
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(variance)
    if allocation is None:
        allocation = Allocation({s.subset: s.n for s in summaries})
    return EstimateReport(
        point=point,
        variance_estimate=variance,
        alpha=alpha,
        interval=(point - half, point + half),
        per_subset=tuple(summaries),
        allocation=allocation,
        spend=None if spend is None else np.asarray(spend, dtype=float),
        method=method,
        extras=dict(extras or {}),
    )


# --------------------------------------------------------------------------
# the general estimator


def _batch_map(batches: Sequence[SampleBatch]) -> dict:
    out = {}
    for b in batches:
        if b.subset in out:
            raise InvalidSubset(f"two batches for subset {subset_key(b.subset)}")
        out[b.subset] = b
    return out


def _terms(batches, weights: WeightScheme, allocation: Optional[Allocation]):
    by_subset = _batch_map(batches)
    terms = []
    for s, lam in weights.lambdas.items():
        inert = not np.any(lam != 0)
        batch = by_subset.get(s)
        if batch is None:
            if inert:
                continue
            raise MissingSubset(f"no batch for weighted subset {subset_key(s)}")
        if allocation is not None and batch.n != allocation[s]:
            raise CountMismatch(f"batch {subset_key(s)} has {batch.n} rows, allocation says {allocation[s]}")
        terms.append((s, project(batch.rows, lam) if batch.n else np.zeros(0), inert))
    return terms


def multippi_point(batches: Sequence[SampleBatch], weights: WeightScheme, allocation: Optional[Allocation] = None) -> float:
    """Sum over weighted subsets of the sample mean of ``lambda_I . X_I``."""
    point = 0.0
    for _, proj, _ in _terms(batches, weights, allocation):
        if proj.size:
            point = point + float(np.mean(proj))
    return point


def confidence_interval(
    batches: Sequence[SampleBatch],
    weights: WeightScheme,
    alpha: float = 0.05,
    allocation: Optional[Allocation] = None,
    spend=None,
    method: str = "multippi",
) -> EstimateReport:
    """Point estimate with a normal interval from per-batch sample variances (divisor n_I - 1)."""
    return _report(_terms(batches, weights, allocation), alpha, method, allocation, spend)


# --------------------------------------------------------------------------
# baselines


def _columns(rows, width: int, name: str) -> np.ndarray:
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != width:
        raise CountMismatch(f"{name} must have {width} column(s), got shape {x.shape}")
    return x


def classical_estimate(x1_rows, alpha: float = 0.05) -> EstimateReport:
    """Sample mean of the gold labels."""
    x1 = _columns(x1_rows, 1, "labels")[:, 0]
    return _report([((1,), x1, False)], alpha, "classical")


def ppi_estimate(labeled, unlabeled, alpha: float = 0.05, model: int = 2) -> EstimateReport:
    """Rectifier mean of ``X1 - Xj`` plus the proxy mean on unlabeled rows.

    ``labeled`` is n x 2 (gold, proxy); ``unlabeled`` holds proxy values.
    """
    lab = _columns(labeled, 2, "labeled")
    unl = _columns(unlabeled, 1, "unlabeled")[:, 0]
    terms = [((1, model), lab[:, 0] - lab[:, 1], False), ((model,), unl, False)]
    return _report(terms, alpha, f"ppi:{model}")


def ppi_pp_lambda(labeled, n_unlabeled: int) -> float:
    """``N/(n+N) * Cov(X1, Xj) / Var(Xj)`` from the labeled rows; 0 if the proxy is constant."""
    lab = _columns(labeled, 2, "labeled")
    n = lab.shape[0]
    if n < 2 or n_unlabeled < 1:
        return 0.0
    var = float(np.var(lab[:, 1], ddof=1))
    if var <= 0:
        return 0.0
    cov = float(np.cov(lab[:, 0], lab[:, 1], ddof=1)[0, 1])
    return n_unlabeled / (n + n_unlabeled) * cov / var


def ppi_pp_scalar(labeled, unlabeled, alpha: float = 0.05, lam: Optional[float] = None, model: int = 2) -> EstimateReport:
    """Power-tuned single-proxy estimator; ``lam`` defaults to the plug-in optimum."""
    lab = _columns(labeled, 2, "labeled")
    unl = _columns(unlabeled, 1, "unlabeled")[:, 0]
    if lam is None:
        lam = ppi_pp_lambda(lab, unl.size)
    lam = float(lam)
    terms = [((1, model), lab[:, 0] - lab[:, 1] * lam, False), ((model,), unl * lam, lam == 0.0)]
    return _report(terms, alpha, f"ppi_pp:{model}", extras={"lambda": lam})


def ppi_pp_vector_lambda(labeled, n_unlabeled: int) -> np.ndarray:
    """``N/(n+N) * Sigma_22^{-1} c`` from the labeled rows (pseudo-inverse if singular)."""
    lab = np.asarray(labeled, dtype=float)
    n, k = lab.shape
    if n < 2 or n_unlabeled < 1:
        return np.zeros(k - 1)
    s = np.atleast_2d(np.cov(lab, rowvar=False, ddof=1))
    return n_unlabeled / (n + n_unlabeled) * (np.linalg.pinv(s[1:, 1:]) @ s[1:, 0])


def ppi_pp_vector(labeled, unlabeled, alpha: float = 0.05, lam=None) -> EstimateReport:
    """All proxies stacked: ``labeled`` is n x k, ``unlabeled`` is N x (k-1)."""
    lab = np.asarray(labeled, dtype=float)
    if lab.ndim != 2 or lab.shape[1] < 2:
        raise CountMismatch("labeled rows must be n x k with k >= 2")
    k = lab.shape[1]
    unl = _columns(unlabeled, k - 1, "unlabeled")
    lam = ppi_pp_vector_lambda(lab, unl.shape[0]) if lam is None else np.asarray(lam, dtype=float)
    rect = lab[:, 0]
    for j in range(k - 1):
        rect = rect - lab[:, j + 1] * lam[j]
    inert = not np.any(lam != 0)
    proxy = project(unl, lam) if unl.shape[0] else np.zeros(0)
    terms = [(tuple(range(1, k + 1)), rect, False), (tuple(range(2, k + 1)), proxy, inert)]
    return _report(terms, alpha, "ppi_pp_vector", extras={"lambda": [float(v) for v in lam]})


def cascade_estimate(labeled, middle, low, lam: float, lam_prime: float, alpha: float = 0.05) -> EstimateReport:
    """Three-tier chain: gold debiased by the strong proxy, whose mean is in
    turn debiased by the weak proxy.

    ``labeled`` is n x 2 (X1, X2), ``middle`` is N x 2 (X2, X3), ``low`` is M x 1 (X3).
    """
    lab = _columns(labeled, 2, "labeled")
    mid = _columns(middle, 2, "middle tier")
    lo = _columns(low, 1, "low tier")[:, 0]
    lam, lam_prime = float(lam), float(lam_prime)
    terms = [
        ((1, 2), lab[:, 0] - lab[:, 1] * lam, False),
        ((2, 3), mid[:, 0] * lam - mid[:, 1] * lam_prime, lam == 0.0 and lam_prime == 0.0),
        ((3,), lo * lam_prime, lam_prime == 0.0),
    ]
    return _report(terms, alpha, "cascade", extras={"lambda": lam, "lambda_prime": lam_prime})


CASCADE_FAMILY = ((1, 2), (2, 3), (3,))


def cascade_lambdas(weights: WeightScheme) -> Tuple[float, float]:
    """Read the two chain coefficients off weights on the cascade family."""
    lam = -float(weights[(1, 2)][1]) if (1, 2) in weights.lambdas else 0.0
    lam_prime = float(weights[(3,)][0]) if (3,) in weights.lambdas else 0.0
    return lam, lam_prime


# --------------------------------------------------------------------------
# burn-in pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for the estimate-allocate-estimate procedure.

    ``cost_model`` must contain the all-variables subset (served from the
    labeled rows) and a row that caps its count at ``labeled_count``.
    Allocated batches smaller than ``min_batch`` are dropped before
    estimation, since a single row has no sample variance.
    """

    labeled_count: int
    cost_model: CostModel
    covariance_method: str = "ledoit_wolf"
    alpha: float = 0.05
    family: str = "full"
    empirical_divisor: str = "N-1"
    target: Optional[TargetSpec] = None
    min_batch: int = 2
    reuse_subset: Optional[Subset] = None

    def __post_init__(self):
        if int(self.labeled_count) < 2:
            raise TooFewSamples("labeled_count must be at least 2")
        _check_alpha(self.alpha)
        if self.covariance_method not in ("ledoit_wolf", "empirical"):
            raise ValueError(f"unknown covariance method {self.covariance_method!r}")
        if self.family not in ("full", "restricted"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.labeled_subset not in self.cost_model.family:
            raise MissingSubset(f"cost model lacks the reused subset {subset_key(self.labeled_subset)}")

    @property
    def k(self) -> int:
        return self.cost_model.k

    @property
    def labeled_subset(self) -> Subset:
        """Subset served from the labeled rows; all variables unless overridden."""
        if self.reuse_subset is not None:
            return tuple(self.reuse_subset)
        return tuple(range(1, self.cost_model.k + 1))

    def resolved_target(self) -> TargetSpec:
        return self.target if self.target is not None else TargetSpec.unit(self.k)


def prune_zero_budgets(cm: CostModel):
    """Drop budget rows equal to zero together with every subset they charge.

    Returns the reduced model (or None if nothing is left) and the indices of
    the kept subsets in the original family.
    """
    zero = cm.budgets <= 0
    if not np.any(zero):
        return cm, np.arange(len(cm.family))
    keep = np.flatnonzero(~np.any(cm.costs[:, zero] > 0, axis=1))
    if keep.size == 0 or np.all(zero):
        return None, keep
    family = SubsetFamily(cm.k, tuple(cm.family.subsets[i] for i in keep))
    return CostModel(family, cm.costs[np.ix_(keep, ~zero)], cm.budgets[~zero]), keep


def plan_pipeline(sigma: CovarianceMatrix, config: PipelineConfig):
    """Allocation and weights for the burn-in procedure under ``sigma``.

    Returns ``(allocation, weights, plan)`` where ``plan`` may be None when
    no budget is left beyond the labeled rows.
    """
    target = config.resolved_target()
    cm = config.cost_model
    reduced, keep = prune_zero_budgets(cm)
    labeled = config.labeled_subset
    cap = config.labeled_count
    plan = None
    if reduced is None or len(reduced.family) == 1 and reduced.family.subsets[0] == labeled:
        counts = {labeled: cap}
    else:
        plan = allocator.solve(sigma, target, reduced)
        counts = dict(plan.rounded.counts)
    counts = {s: n for s, n in counts.items() if n > 0}
    changed = plan is None
    if any(n < config.min_batch for n in counts.values()):
        trimmed = {s: n for s, n in counts.items() if n >= config.min_batch}
        covered = frozenset(i for s in trimmed for i in s)
        if target.support() <= covered:
            counts = trimmed
            changed = True
    alloc = Allocation(counts)
    weights = allocator.optimal_weights(sigma, target, alloc) if changed else plan.weights
    return alloc, weights, plan


def pipeline_run(labeled, config: PipelineConfig, draw: Callable[[Subset, int], np.ndarray], sigma_hat: Optional[CovarianceMatrix] = None) -> EstimateReport:
    """Estimate the covariance on the labeled rows, allocate, then estimate.

    The all-variables batch reuses the first labeled rows in order; every
    other batch comes from ``draw(subset, n)``. ``sigma_hat`` skips the
    covariance step when supplied (callers looping over budgets reuse it).
    """
    lab = np.asarray(labeled, dtype=float)
    if lab.ndim != 2 or lab.shape[1] != config.k:
        raise CountMismatch(f"labeled rows must be N x {config.k}")
    if lab.shape[0] < config.labeled_count:
        raise TooFewSamples(f"need {config.labeled_count} labeled rows, got {lab.shape[0]}")
    if sigma_hat is None:
        sigma_hat = estimate_covariance(lab, config.covariance_method, config.empirical_divisor)
    alloc, weights, plan = plan_pipeline(sigma_hat, config)
    labeled_subset = config.labeled_subset
    batches = []
    for s, n in alloc.items():
        if s == labeled_subset:
            rows = lab[:n][:, np.asarray(s) - 1]
        else:
            rows = np.asarray(draw(s, n), dtype=float).reshape(n, len(s))
        batches.append(SampleBatch(s, rows))
    spend = config.cost_model.spend(alloc)
    report = confidence_interval(batches, weights, config.alpha, alloc, spend, "multippi")
    extras = {"weights": weights.to_dict()}
    if plan is not None:
        extras["predicted_variance"] = plan.predicted_variance_rounded
    return EstimateReport(**{**report.__dict__, "extras": extras})
