"""Budget-constrained allocation of samples across variable subsets.

Given a covariance ``Sigma``, a target ``a`` and a cost model, find counts
``n_I`` that minimize the variance ``a^T M(n)^+ a`` of the best unbiased
linear estimator, where ``M(n) = sum_I n_I P_I^T Sigma_I^{-1} P_I``.

Two routes solve the continuous relaxation:

* ``solve_single_budget`` works on the dual of the one-budget problem,
  ``max a^T y  s.t.  y_I^T Sigma_I^{-1} y_I <= c_I``. Its optimum ``U``
  satisfies ``V = U^2 / B``.
* ``solve_multi_budget`` minimizes the variance directly over the polytope
  ``{nu >= 0, C nu <= B}`` with a log-barrier Newton method.

Fractional counts are then floored (with a support repair) by
``round_allocation``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence, Tuple

import numpy as np

from . import _barrier
from .errors import (
    Infeasible,
    InvalidSubset,
    NoModelSubsets,
    SolverNotConverged,
    SupportLostAfterRounding,
    UnknownSubset,
    UnreachableTarget,
)
from .model import (
    Allocation,
    AnyAllocation,
    CostModel,
    CovarianceMatrix,
    FractionalAllocation,
    Subset,
    SubsetFamily,
    TargetSpec,
    WeightScheme,
    canonical_subset,
    dumps,
    subset_key,
    validate_cost_model,
)

PINV_CUTOFF = 1e-12
BARRIER_TOL = 1e-10
BARRIER_GROWTH = 20.0
CENTERING_TOL = 1e-6
INITIAL_BARRIER = 100.0
TRUNCATE_REL = 1e-9
SNAP_REL = 1e-6
TIE_REL = 1e-6
FLAT_REL = 1e-8
MAX_OUTER = 40
MAX_INNER = 200


# --------------------------------------------------------------------------
# closed-form pieces


def _check_dims(sigma: CovarianceMatrix, target: TargetSpec | None = None):
    if target is not None and target.k != sigma.k:
        raise InvalidSubset(f"target has length {target.k}, covariance is {sigma.k}x{sigma.k}")


def _pinv_psd(m: np.ndarray, cutoff: float = PINV_CUTOFF) -> np.ndarray:
    """Eigen pseudo-inverse; eigenvalues below ``cutoff * max eigenvalue`` count as zero."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    top = w[-1] if w.size else 0.0
    if top <= 0:
        return np.zeros_like(m)
    keep = w > cutoff * top
    return (v[:, keep] / w[keep]) @ v[:, keep].T


def information_matrix(sigma: CovarianceMatrix, alloc: AnyAllocation) -> np.ndarray:
    """``sum_I n_I P_I^T Sigma_I^{-1} P_I`` over subsets with positive count."""
    out = np.zeros((sigma.k, sigma.k))
    for s, n in alloc.items():
        if n > 0:
            if s[-1] > sigma.k:
                raise InvalidSubset(f"subset {subset_key(s)} exceeds k={sigma.k}")
            out += n * sigma.embedded_inv(s)
    return out


def _covered(alloc: AnyAllocation) -> frozenset:
    return frozenset(i for s in alloc.positive() for i in s)


def _solve_information(sigma, target, alloc):
    """``w = M^+ a`` computed on the block of covered coordinates."""
    _check_dims(sigma, target)
    covered = _covered(alloc)
    missing = target.support() - covered
    if missing:
        raise UnreachableTarget(f"target depends on uncovered indices {sorted(missing)}")
    m = information_matrix(sigma, alloc)
    w = np.zeros(sigma.k)
    if len(covered) == sigma.k:
        pinv = _pinv_psd(m)
        w = pinv @ target.a
        # one step of iterative refinement keeps M w = a tight when M is badly scaled
        w += pinv @ (target.a - m @ w)
        return w
    idx = np.asarray(sorted(covered)) - 1
    block = m[np.ix_(idx, idx)]
    pinv = _pinv_psd(block)
    w[idx] = pinv @ target.a[idx]
    w[idx] += pinv @ (target.a[idx] - block @ w[idx])
    return w


def allocation_variance(sigma: CovarianceMatrix, target: TargetSpec, alloc: AnyAllocation) -> float:
    """``a^T M(n)^+ a``; raises UnreachableTarget if ``a`` touches an uncovered index."""
    w = _solve_information(sigma, target, alloc)
    return float(max(target.a @ w, 0.0))


def _weights_from(sigma, target, alloc, w) -> WeightScheme:
    positive = alloc.positive()
    if len(positive) == 1:
        # one batch must carry the target by itself: lambda = a on that subset, exactly
        s = positive[0]
        return WeightScheme({s: target.a[np.asarray(s) - 1]})
    out = {}
    for s in positive:
        out[s] = alloc[s] * (sigma.sub_inv(s) @ w[np.asarray(s) - 1])
    return WeightScheme(out)


def optimal_weights(sigma: CovarianceMatrix, target: TargetSpec, alloc: AnyAllocation) -> WeightScheme:
    """``lambda_I = n_I Sigma_I^{-1} (M^+ a)_I`` for every subset with positive count."""
    return _weights_from(sigma, target, alloc, _solve_information(sigma, target, alloc))


def weights_and_variance(sigma: CovarianceMatrix, target: TargetSpec, alloc: AnyAllocation):
    """``(optimal_weights, allocation_variance)`` from a single solve."""
    w = _solve_information(sigma, target, alloc)
    return _weights_from(sigma, target, alloc, w), float(max(target.a @ w, 0.0))


def weights_variance(sigma: CovarianceMatrix, weights: WeightScheme, alloc: AnyAllocation) -> float:
    """``sum_I lambda_I^T Sigma_I lambda_I / n_I``: variance of a weighted estimator."""
    total = 0.0
    for s, lam in weights.lambdas.items():
        n = alloc[s]
        if n <= 0:
            if np.any(lam != 0):
                return float("inf")
            continue
        total += float(lam @ sigma.sub(s) @ lam) / n
    return total


# --------------------------------------------------------------------------
# result containers


@dataclass(frozen=True, eq=False)
class SocpSolution:
    """Dual optimum of the one-budget problem.

    ``y_star`` maximizes ``a^T y`` subject to ``y_I^T Sigma_I^{-1} y_I <= c_I``;
    ``multipliers`` are the constraint multipliers and ``objective`` is ``U``.
    """

    y_star: np.ndarray
    multipliers: Mapping[Subset, float]
    objective: float
    slack: Mapping[Subset, float]
    iterations: int
    duality_measure: float

    def to_dict(self) -> dict:
        return {
            "y_star": [float(v) for v in self.y_star],
            "multipliers": {subset_key(s): float(v) for s, v in self.multipliers.items()},
            "objective": float(self.objective),
            "slack": {subset_key(s): float(v) for s, v in self.slack.items()},
            "iterations": int(self.iterations),
            "duality_measure": float(self.duality_measure),
        }


@dataclass(frozen=True, eq=False)
class AllocationPlan:
    fractional: FractionalAllocation
    rounded: Allocation
    weights: WeightScheme
    predicted_variance_fractional: float
    predicted_variance_rounded: float
    spend: np.ndarray
    diagnostics: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fractional": self.fractional.to_dict(),
            "rounded": self.rounded.to_dict(),
            "weights": self.weights.to_dict(),
            "predicted_variance_fractional": float(self.predicted_variance_fractional),
            "predicted_variance_rounded": float(self.predicted_variance_rounded),
            "spend": [float(v) for v in self.spend],
            "diagnostics": dict(self.diagnostics),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


# --------------------------------------------------------------------------
# continuous solvers


def _restricted_inverses(sigma, subsets, coords):
    pos = {c: j for j, c in enumerate(coords)}
    qs = np.zeros((len(subsets), len(coords), len(coords)))
    for i, s in enumerate(subsets):
        idx = [pos[c] for c in s]
        qs[i][np.ix_(idx, idx)] = sigma.sub_inv(s)
    return qs


def _truncate(nu: np.ndarray, cm: CostModel, target: TargetSpec) -> np.ndarray:
    """Zero out counts that are negligible relative to what the subset could buy alone."""
    costs = cm.costs
    with np.errstate(divide="ignore"):
        caps = np.min(np.where(costs > 0, cm.budgets / np.where(costs > 0, costs, 1.0), np.inf), axis=1)
    small = nu < TRUNCATE_REL * caps
    out = np.where(small, 0.0, nu)
    covered = frozenset(i for s, v in zip(cm.family, out) if v > 0 for i in s)
    if not target.support() <= covered:
        return nu
    return out


def _flat_support(sigma, target, cm, frac) -> list:
    """Subsets along which the variance looks flat at the fractional optimum.

    The Hessian of ``a^T M^+ a`` in the counts is ``2 G^T M^+ G`` with columns
    ``G_I = Sigma_I^{-1} (M^+ a)_I``. Restricted to the support (plus, for one
    budget row, empty subsets whose marginal value per cost ties the best)
    and to moves that keep every tight budget fixed, a near-zero eigenvalue
    means another split does as well. This is a report, not a certificate.
    """
    family = cm.family
    nu = frac.as_vector(family)
    w = _solve_information(sigma, target, frac)
    covered = _covered(frac)
    cols, gain = [], np.full(len(family), -np.inf)
    for i, s in enumerate(family):
        g = np.zeros(sigma.k)
        if set(s) <= covered:
            ix = np.asarray(s) - 1
            g[ix] = sigma.sub_inv(s) @ w[ix]
            # minus the derivative of the variance in n_I
            gain[i] = float(w[ix] @ g[ix])
        cols.append(g)
    chosen = nu > 0
    if cm.m == 1:
        ratio = gain / cm.costs[:, 0]
        chosen |= ratio >= (1 - TIE_REL) * ratio[nu > 0].max()
    idx = np.flatnonzero(chosen)
    if len(idx) < 2:
        return []
    spend = cm.costs.T @ nu
    tight = spend >= (1 - TIE_REL) * cm.budgets
    g = np.column_stack([cols[i] for i in idx])
    m = information_matrix(sigma, frac)
    hess = 2.0 * g.T @ _pinv_psd(m) @ g
    if np.any(tight):
        _, sv, vt = np.linalg.svd(cm.costs[idx][:, tight].T)
        rank = int(np.sum(sv > 1e-12 * sv.max()))
        basis = vt[rank:].T
    else:
        basis = np.eye(len(idx))
    if basis.shape[1] == 0:
        return []
    eig = np.linalg.eigvalsh(basis.T @ hess @ basis)
    scale = max(np.linalg.eigvalsh(hess).max(), 1e-300)
    return [subset_key(family.subsets[i]) for i in idx] if eig[0] <= FLAT_REL * scale else []


def _finish(sigma, target, cm, nu, diagnostics) -> AllocationPlan:
    nu = _truncate(np.maximum(nu, 0.0), cm, target)
    frac = FractionalAllocation.from_vector(cm.family, nu)
    v_frac = allocation_variance(sigma, target, frac)
    rounded = round_allocation(frac, cm, target)
    weights, v_round = weights_and_variance(sigma, target, rounded)
    flat = _flat_support(sigma, target, cm, frac)
    diagnostics = {**diagnostics, "apparent_nonunique": bool(flat), "flat_subsets": flat}
    return AllocationPlan(
        fractional=frac,
        rounded=rounded,
        weights=weights,
        predicted_variance_fractional=v_frac,
        predicted_variance_rounded=v_round,
        spend=cm.spend(rounded),
        diagnostics=MappingProxyType(dict(diagnostics)),
    )


def solve_single_budget(sigma: CovarianceMatrix, target: TargetSpec, cm: CostModel) -> Tuple[SocpSolution, AllocationPlan]:
    """One budget row: solve the dual program, then read off counts from its multipliers."""
    validate_cost_model(cm)
    _check_dims(sigma, target)
    if cm.m != 1:
        raise InvalidSubset(f"single-budget route needs one budget row, got {cm.m}")
    if cm.k != sigma.k:
        raise InvalidSubset("cost model and covariance disagree on k")
    family = cm.family
    covered = family.covered()
    missing = target.support() - covered
    if missing:
        raise UnreachableTarget(f"no subset covers indices {sorted(missing)}")
    coords = sorted(covered)
    qs = _restricted_inverses(sigma, family.subsets, coords)
    c = cm.costs[:, 0].copy()
    budget = float(cm.budgets[0])
    a = target.a[np.asarray(coords) - 1].copy()

    # a feasible multiple of a gives a lower bound on U and fixes the barrier scale
    q_of_a = np.array([a @ q @ a for q in qs])
    with np.errstate(divide="ignore"):
        scale = np.min(np.where(q_of_a > 0, np.sqrt(c / np.where(q_of_a > 0, q_of_a, 1.0)), np.inf))
    lower = scale * float(a @ a) if np.isfinite(scale) else 1.0
    t0 = len(family) / max(lower, 1e-300)

    y, slack, t, steps, outer, ok = _barrier.maximize_dual(
        qs, c, a, t0, BARRIER_TOL, MAX_OUTER, MAX_INNER, BARRIER_GROWTH, CENTERING_TOL
    )
    if not ok or not np.all(np.isfinite(y)):
        raise SolverNotConverged(f"dual barrier stopped after {outer} outer steps without meeting tolerance")
    alpha = 1.0 / (t * slack)
    u = float(a @ y)

    # primal weights from the multipliers, then counts proportional to sqrt(c_I) ||lambda_I||
    norms = np.zeros(len(family))
    pos = {cc: j for j, cc in enumerate(coords)}
    for i, s in enumerate(family):
        yi = y[[pos[cc] for cc in s]]
        lam = 2.0 * alpha[i] * (sigma.sub_inv(s) @ yi)
        norms[i] = np.sqrt(max(c[i] * float(lam @ sigma.sub(s) @ lam), 0.0))
    nu = budget / c * norms / norms.sum()

    y_full = np.zeros(sigma.k)
    y_full[np.asarray(coords) - 1] = y
    socp = SocpSolution(
        y_star=y_full,
        multipliers=MappingProxyType({s: float(v) for s, v in zip(family, alpha)}),
        objective=u,
        slack=MappingProxyType({s: float(v) for s, v in zip(family, slack)}),
        iterations=int(steps),
        duality_measure=len(family) / t,
    )
    diagnostics = {
        "route": "single_budget",
        "newton_steps": int(steps),
        "outer_steps": int(outer),
        "duality_measure": len(family) / t,
        "dual_objective": u,
        "dual_variance": u * u / budget,
    }
    plan = _finish(sigma, target, cm, nu, diagnostics)
    return socp, plan


def solve_multi_budget(sigma: CovarianceMatrix, target: TargetSpec, cm: CostModel) -> AllocationPlan:
    """Any number of budget rows: barrier Newton on the variance itself."""
    validate_cost_model(cm)
    _check_dims(sigma, target)
    if cm.k != sigma.k:
        raise InvalidSubset("cost model and covariance disagree on k")
    family = cm.family
    covered = family.covered()
    missing = target.support() - covered
    if missing:
        raise Infeasible(f"no affordable subset covers indices {sorted(missing)}")
    coords = sorted(covered)
    qs = _restricted_inverses(sigma, family.subsets, coords)
    a = target.a[np.asarray(coords) - 1].copy()

    # budget rows that charge nothing to any subset constrain nothing
    rows = np.flatnonzero(np.any(cm.costs > 0, axis=0))
    C = np.ascontiguousarray(cm.costs[:, rows].T)
    B = cm.budgets[rows].copy()
    # interior start: equal share per subset, scaled to spend half of the tightest row
    p = len(family)
    load = C @ np.ones(p)
    nu0 = np.full(p, 0.5 * float(np.min(B / np.where(load > 0, load, np.inf))))

    nu, f, t, steps, outer, ok = _barrier.minimize_variance(
        qs, C, B, a, nu0, BARRIER_TOL, MAX_OUTER, MAX_INNER, BARRIER_GROWTH, CENTERING_TOL, INITIAL_BARRIER
    )
    if not ok or not np.all(np.isfinite(nu)):
        raise SolverNotConverged(f"barrier stopped after {outer} outer steps without meeting tolerance")
    diagnostics = {
        "route": "multi_budget",
        "newton_steps": int(steps),
        "outer_steps": int(outer),
        "duality_measure": (p + len(B)) / t,
        "barrier_objective": float(f),
    }
    return _finish(sigma, target, cm, nu, diagnostics)


def solve(sigma: CovarianceMatrix, target: TargetSpec, cm: CostModel, route: str = "auto") -> AllocationPlan:
    """Dispatch: ``"single"`` and ``"multi"`` force a route; ``"auto"`` picks by row count."""
    if route not in ("auto", "single", "multi"):
        raise ValueError(f"unknown route {route!r}")
    if route == "single" or (route == "auto" and cm.m == 1):
        return solve_single_budget(sigma, target, cm)[1]
    return solve_multi_budget(sigma, target, cm)


# --------------------------------------------------------------------------
# rounding


def _normalized_cost(cm: CostModel, i: int) -> float:
    return float(np.sum(cm.costs[i] / cm.budgets))


def round_allocation(frac: FractionalAllocation, cm: CostModel, target: TargetSpec) -> Allocation:
    """Floor every count; if the target loses coverage, buy one sample of the
    cheapest subset that restores it.

    Counts within a relative ``1e-6`` of an integer are snapped to it first so
    solver noise (``N - 1e-10``) does not cost a whole sample.
    """
    family = cm.family
    for s, _ in frac.items():
        if s not in family:
            raise UnknownSubset(f"subset {subset_key(s)} not in cost model")
    nu = frac.as_vector(family)
    near = np.round(nu)
    snapped = np.where(np.abs(nu - near) <= SNAP_REL * np.maximum(1.0, np.abs(nu)), near, np.floor(nu))
    n = snapped if cm.is_feasible(Allocation.from_vector(family, snapped)) else np.floor(nu)
    n = n.astype(int)

    need = target.support()
    for _ in range(len(need)):
        covered = frozenset(i for s, v in zip(family, n) if v > 0 for i in s)
        missing = need - covered
        if not missing:
            break
        spend = n @ cm.costs

        def candidates(pool):
            out = []
            for i in pool:
                s = family.subsets[i]
                if n[i] == 0 and missing & set(s) and np.all(spend + cm.costs[i] <= cm.budgets * (1 + 1e-12)):
                    out.append((_normalized_cost(cm, i), -len(missing & set(s)), s, i))
            return out

        floored = [i for i in range(len(family)) if 0 < nu[i] < 1]
        options = candidates(floored) or candidates(range(len(family)))
        if options:
            n[min(options)[3]] = 1
            continue
        freed = _make_room(n, cm, family, missing, need)
        if freed is None:
            raise SupportLostAfterRounding(f"cannot restore indices {sorted(missing)} within budget")
        n = freed
    covered = frozenset(i for s, v in zip(family, n) if v > 0 for i in s)
    if not need <= covered:
        raise SupportLostAfterRounding(f"indices {sorted(need - covered)} lost after rounding")
    return Allocation.from_vector(family, n)


def _make_room(n, cm, family, missing, need):
    """Buy one sample of a subset covering ``missing`` by trimming another subset.

    The donor gives up the fewest samples that make the purchase fit, and keeps at
    least one so nothing it covers is lost. Among options the smallest relative cut
    wins, then the cheaper purchase.
    """
    best = None
    for i, s in enumerate(family.subsets):
        if n[i] or not (missing & set(s)):
            continue
        for j in range(len(family)):
            if n[j] < 2:
                continue
            over = n @ cm.costs + cm.costs[i] - cm.budgets * (1 + 1e-12)
            pos = cm.costs[j] > 0
            if np.any((over > 0) & ~pos):
                continue
            cut = int(np.max(np.ceil(np.where(pos & (over > 0), over / np.where(pos, cm.costs[j], 1.0), 0.0))))
            if cut >= n[j]:
                continue
            key = (cut / n[j], _normalized_cost(cm, i), family.subsets[i], family.subsets[j])
            if best is None or key < best[0]:
                best = (key, i, j, cut)
    if best is None:
        return None
    _, i, j, cut = best
    out = n.copy()
    out[j] -= cut
    out[i] = 1
    return out


# --------------------------------------------------------------------------
# families and the low-budget limit


def restricted_family(k: int) -> SubsetFamily:
    """``{1..k}``, ``{2..k}`` and each singleton model ``{j}``, j = 2..k.

    For k = 2 the joint model subset coincides with ``{2}`` and appears once.
    """
    if k < 2:
        raise InvalidSubset("restricted family needs k >= 2")
    subsets = [tuple(range(1, k + 1))]
    if k > 2:
        subsets.append(tuple(range(2, k + 1)))
    subsets.extend((j,) for j in range(2, k + 1))
    return SubsetFamily(k, tuple(subsets))


def explained_variance(sigma: CovarianceMatrix, subset: Sequence[int]) -> float:
    """``Cov(X_1, X_I)^T Sigma_I^{-1} Cov(X_1, X_I)``."""
    idx = np.asarray(subset) - 1
    cov = sigma.entries[0, idx]
    return float(cov @ sigma.sub_inv(subset) @ cov)


def low_budget_winner(sigma: CovarianceMatrix, subsets: Sequence[Sequence[int]], costs: Sequence[float]) -> Subset:
    """Model subset with the largest explained-variance-per-cost ratio.

    Ties go to the lexicographically smallest subset.
    """
    canon = [canonical_subset(s, sigma.k) for s in subsets]
    if not canon:
        raise NoModelSubsets("no model subsets given")
    if len(costs) != len(canon):
        raise InvalidSubset("need one cost per subset")
    best = None
    for s, c in zip(canon, costs):
        if 1 in s:
            raise InvalidSubset(f"model subset {subset_key(s)} contains the labeled index")
        if not c > 0:
            raise InvalidSubset(f"cost of {subset_key(s)} must be positive")
        key = (-explained_variance(sigma, s) / float(c), s)
        if best is None or key < best:
            best = key
    return best[1]
