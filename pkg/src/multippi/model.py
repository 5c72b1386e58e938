"""Domain types shared by every other module.

Variable indices are 1-based everywhere outside this module's internals:
a subset is a sorted tuple such as ``(1, 2)`` and serializes as ``"1,2"``.
All containers are immutable after construction.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence, Tuple, Union

import numpy as np

from .errors import (
    EmptyFamily,
    InvalidCovariance,
    InvalidSubset,
    InvalidTarget,
    NegativeCost,
    NonfiniteEntry,
    NonpositiveBudget,
    SingularSubmatrix,
    UnknownSubset,
    ZeroCostSubset,
)

Subset = Tuple[int, ...]

DEFAULT_TOLERANCE = 1e-8


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def canonical_subset(indices: Iterable[int], k: int | None = None) -> Subset:
    """Sort and deduplicate ``indices``; check they are valid 1-based indices."""
    try:
        out = tuple(sorted({int(i) for i in indices}))
    except (TypeError, ValueError) as exc:
        raise InvalidSubset(f"non-integer index in {indices!r}") from exc
    if not out:
        raise InvalidSubset("empty subset")
    if out[0] < 1 or (k is not None and out[-1] > k):
        raise InvalidSubset(f"subset {out} has indices outside 1..{k}")
    return out


def subset_key(subset: Sequence[int]) -> str:
    return ",".join(str(i) for i in subset)


def parse_subset(text: str, k: int | None = None) -> Subset:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    return canonical_subset(parts, k)


def dumps(obj) -> str:
    """Canonical JSON text used for every serialized artifact."""
    return json.dumps(obj, indent=2) + "\n"


# --------------------------------------------------------------------------
# targets and subset families


@dataclass(frozen=True)
class TargetSpec:
    """Coefficients ``a`` of the estimand ``a . E[X]``."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise InvalidTarget("target must be a nonempty vector")
        if not np.all(np.isfinite(a)):
            raise NonfiniteEntry("target has non-finite entries")
        if not np.any(a != 0):
            raise InvalidTarget("target vector is identically zero")
        object.__setattr__(self, "a", _frozen(a))

    @classmethod
    def unit(cls, k: int, index: int = 1) -> "TargetSpec":
        a = np.zeros(k)
        a[index - 1] = 1.0
        return cls(a)

    @property
    def k(self) -> int:
        return self.a.size

    def support(self) -> frozenset:
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.a))

    def to_list(self) -> list:
        return [float(x) for x in self.a]


@dataclass(frozen=True)
class SubsetFamily:
    """Ordered collection of distinct, nonempty index subsets of ``1..k``."""

    k: int
    subsets: Tuple[Subset, ...]

    def __post_init__(self):
        if int(self.k) < 1:
            raise InvalidSubset("k must be positive")
        object.__setattr__(self, "k", int(self.k))
        canon = tuple(canonical_subset(s, self.k) for s in self.subsets)
        if not canon:
            raise EmptyFamily("subset family is empty")
        if len(set(canon)) != len(canon):
            raise InvalidSubset("duplicate subsets in family")
        object.__setattr__(self, "subsets", canon)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(canon)})

    @classmethod
    def powerset(cls, k: int) -> "SubsetFamily":
        """All nonempty subsets of ``1..k``, ordered by size then lexicographically."""
        subsets = [c for r in range(1, k + 1) for c in itertools.combinations(range(1, k + 1), r)]
        return cls(k, tuple(subsets))

    @classmethod
    def labeled_plus_models(cls, k: int) -> "SubsetFamily":
        """``{1..k}`` together with every nonempty subset of the models ``2..k``."""
        models = [c for r in range(1, k) for c in itertools.combinations(range(2, k + 1), r)]
        return cls(k, (tuple(range(1, k + 1)),) + tuple(models))

    def __len__(self) -> int:
        return len(self.subsets)

    def __iter__(self) -> Iterator[Subset]:
        return iter(self.subsets)

    def __contains__(self, subset) -> bool:
        return tuple(subset) in self._index

    def index(self, subset: Sequence[int]) -> int:
        try:
            return self._index[tuple(subset)]
        except KeyError:
            raise UnknownSubset(f"subset {subset_key(subset)} not in family") from None

    def covered(self) -> frozenset:
        return frozenset(i for s in self.subsets for i in s)


# --------------------------------------------------------------------------
# covariance


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric PSD matrix with principal-submatrix views.

    ``tolerance`` is relative to the Frobenius norm of the matrix and is
    used for both the symmetry and the PSD check.
    """

    entries: np.ndarray
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise InvalidCovariance(f"covariance must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonfiniteEntry("covariance has non-finite entries")
        if self.tolerance < 0:
            raise InvalidCovariance("tolerance must be nonnegative")
        scale = max(np.linalg.norm(m), np.finfo(float).tiny)
        tol = self.tolerance * scale
        if np.max(np.abs(m - m.T)) > tol:
            raise InvalidCovariance("covariance is not symmetric")
        m = 0.5 * (m + m.T)
        eig = np.linalg.eigvalsh(m)
        if eig[0] < -tol:
            raise InvalidCovariance(f"covariance is not PSD (min eigenvalue {eig[0]:.3e})")
        object.__setattr__(self, "entries", _frozen(m))
        object.__setattr__(self, "_eig", (float(eig[0]), float(eig[-1])))
        object.__setattr__(self, "_inv_cache", {})

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def gamma_min(self) -> float:
        return self._eig[0]

    @property
    def gamma_max(self) -> float:
        return self._eig[1]

    def is_spd(self) -> bool:
        return self.gamma_min > self.tolerance * max(np.linalg.norm(self.entries), 1e-300)

    def sub(self, subset: Sequence[int]) -> np.ndarray:
        idx = np.asarray(subset, dtype=int) - 1
        return self.entries[np.ix_(idx, idx)]

    def sub_inv(self, subset: Sequence[int]) -> np.ndarray:
        """Inverse of the principal submatrix on ``subset``."""
        key = tuple(subset)
        cached = self._inv_cache.get(key)
        if cached is not None:
            return cached
        block = self.sub(key)
        w = np.linalg.eigvalsh(block)
        if w[0] <= self.tolerance * max(np.linalg.norm(self.entries), 1e-300):
            raise SingularSubmatrix(f"submatrix on {subset_key(key)} is singular (min eigenvalue {w[0]:.3e})")
        inv = np.linalg.inv(block)
        inv = _frozen(0.5 * (inv + inv.T))
        self._inv_cache[key] = inv
        return inv

    def embedded_inv(self, subset: Sequence[int]) -> np.ndarray:
        """``P_I^T Sigma_I^{-1} P_I`` as a (read-only) k x k matrix."""
        key = ("embedded", tuple(subset))
        cached = self._inv_cache.get(key)
        if cached is None:
            idx = np.asarray(subset, dtype=int) - 1
            out = np.zeros((self.k, self.k))
            out[np.ix_(idx, idx)] = self.sub_inv(subset)
            cached = _frozen(out)
            self._inv_cache[key] = cached
        return cached

    def to_list(self) -> list:
        return [[float(x) for x in row] for row in self.entries]

    def to_json(self) -> str:
        return dumps(self.to_list())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.entries:
            writer.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str, tolerance: float = DEFAULT_TOLERANCE) -> "CovarianceMatrix":
        return cls(np.array(json.loads(text), dtype=float), tolerance)

    @classmethod
    def from_csv(cls, text: str, tolerance: float = DEFAULT_TOLERANCE) -> "CovarianceMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        return cls(np.array([[float(x) for x in r] for r in rows]), tolerance)


# --------------------------------------------------------------------------
# costs and allocations


@dataclass(frozen=True)
class CostModel:
    """Per-subset cost vectors ``c_I`` (one entry per budget row) and budgets ``B``.

    Construction checks shapes only; :func:`validate_cost_model` checks the
    semantic invariants and is called by every solver.
    """

    family: SubsetFamily
    costs: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        budgets = np.atleast_1d(np.asarray(self.budgets, dtype=float))
        costs = np.asarray(self.costs, dtype=float)
        if costs.ndim == 1:
            costs = costs.reshape(-1, 1) if budgets.size == 1 else costs.reshape(1, -1)
        if budgets.ndim != 1 or costs.shape != (len(self.family), budgets.size):
            raise InvalidSubset(
                f"costs must have shape ({len(self.family)}, {budgets.size}), got {costs.shape}"
            )
        if not (np.all(np.isfinite(costs)) and np.all(np.isfinite(budgets))):
            raise NonfiniteEntry("cost model has non-finite entries")
        object.__setattr__(self, "costs", _frozen(costs))
        object.__setattr__(self, "budgets", _frozen(budgets))

    @property
    def m(self) -> int:
        return self.budgets.size

    @property
    def k(self) -> int:
        return self.family.k

    def cost(self, subset: Sequence[int]) -> np.ndarray:
        return self.costs[self.family.index(subset)]

    def max_count(self, subset: Sequence[int]) -> float:
        """Largest real count of ``subset`` affordable on its own."""
        c = self.cost(subset)
        pos = c > 0
        return float(np.min(self.budgets[pos] / c[pos]))

    def spend(self, alloc: "Allocation | FractionalAllocation") -> np.ndarray:
        vec = alloc.as_vector(self.family)
        return vec @ self.costs

    def is_feasible(self, alloc, rtol: float = 1e-12) -> bool:
        return bool(np.all(self.spend(alloc) <= self.budgets * (1 + rtol)))

    def with_budgets(self, budgets) -> "CostModel":
        return CostModel(self.family, self.costs, budgets)

    def to_dict(self) -> dict:
        return {
            "k": self.family.k,
            "subsets": [list(s) for s in self.family],
            "costs": [[float(x) for x in row] for row in self.costs],
            "budgets": [float(b) for b in self.budgets],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping) -> "CostModel":
        family = SubsetFamily(int(data["k"]), tuple(tuple(s) for s in data["subsets"]))
        budgets = np.asarray(data["budgets"], dtype=float)
        costs = np.asarray(data["costs"], dtype=float).reshape(len(family), budgets.size)
        return cls(family, costs, budgets)

    @classmethod
    def from_json(cls, text: str) -> "CostModel":
        return cls.from_dict(json.loads(text))


def validate_cost_model(cm: CostModel) -> CostModel:
    """Return ``cm`` unchanged if costs are nonnegative, budgets positive and
    no subset is free in every budget row."""
    if len(cm.family) == 0:
        raise EmptyFamily("cost model has no subsets")
    if np.any(cm.costs < 0):
        raise NegativeCost("negative cost entry")
    if np.any(cm.budgets <= 0):
        raise NonpositiveBudget(f"budgets must be positive, got {cm.budgets.tolist()}")
    free = ~np.any(cm.costs > 0, axis=1)
    if np.any(free):
        bad = [subset_key(cm.family.subsets[i]) for i in np.flatnonzero(free)]
        raise ZeroCostSubset(f"subsets with zero cost in every row: {bad}")
    return cm


class _AllocationBase:
    _values: Mapping

    def items(self):
        return self._values.items()

    def __getitem__(self, subset):
        return self._values.get(tuple(subset), 0)

    def __len__(self):
        return len(self._values)

    def positive(self) -> Tuple[Subset, ...]:
        return tuple(s for s, v in self._values.items() if v > 0)

    def as_vector(self, family: SubsetFamily) -> np.ndarray:
        out = np.zeros(len(family))
        for s, v in self._values.items():
            out[family.index(s)] = v
        return out

    def to_dict(self) -> dict:
        return {subset_key(s): v for s, v in self._values.items()}


def _canonical_items(values: Mapping, cast) -> dict:
    out = {}
    for s, v in values.items():
        key = parse_subset(s) if isinstance(s, str) else canonical_subset(s)
        if key in out:
            raise InvalidSubset(f"duplicate key {subset_key(key)}")
        out[key] = cast(v)
    return out


@dataclass(frozen=True, eq=False)
class Allocation(_AllocationBase):
    """Integer sample counts per subset."""

    counts: Mapping[Subset, int] = field(default_factory=dict)

    def __post_init__(self):
        values = _canonical_items(self.counts, int)
        if any(v < 0 for v in values.values()):
            raise InvalidSubset("negative sample count")
        object.__setattr__(self, "counts", MappingProxyType(values))
        object.__setattr__(self, "_values", self.counts)

    def __eq__(self, other):
        return isinstance(other, Allocation) and dict(self.counts) == dict(other.counts)

    @classmethod
    def from_vector(cls, family: SubsetFamily, vec) -> "Allocation":
        return cls({s: int(v) for s, v in zip(family, vec)})

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Allocation":
        return cls(json.loads(text))


@dataclass(frozen=True, eq=False)
class FractionalAllocation(_AllocationBase):
    """Real-valued (relaxed) sample counts per subset."""

    weights: Mapping[Subset, float] = field(default_factory=dict)

    def __post_init__(self):
        values = _canonical_items(self.weights, float)
        if any(v < 0 or not np.isfinite(v) for v in values.values()):
            raise InvalidSubset("fractional counts must be finite and nonnegative")
        object.__setattr__(self, "weights", MappingProxyType(values))
        object.__setattr__(self, "_values", self.weights)

    def __eq__(self, other):
        return isinstance(other, FractionalAllocation) and dict(self.weights) == dict(other.weights)

    @classmethod
    def from_vector(cls, family: SubsetFamily, vec) -> "FractionalAllocation":
        return cls({s: float(v) for s, v in zip(family, vec)})

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FractionalAllocation":
        return cls(json.loads(text))


AnyAllocation = Union[Allocation, FractionalAllocation]


def support_union(alloc: AnyAllocation, family: SubsetFamily) -> frozenset:
    """Union of the subsets that receive a positive count."""
    for s, _ in alloc.items():
        if s not in family:
            raise UnknownSubset(f"subset {subset_key(s)} not in family")
    return frozenset(i for s in alloc.positive() for i in s)


# --------------------------------------------------------------------------
# weights and samples


@dataclass(frozen=True, eq=False)
class WeightScheme:
    """Per-subset weight vectors ``lambda_I`` (aligned with the sorted subset)."""

    lambdas: Mapping[Subset, np.ndarray]

    def __post_init__(self):
        out = {}
        for s, v in self.lambdas.items():
            key = parse_subset(s) if isinstance(s, str) else canonical_subset(s)
            vec = np.atleast_1d(np.asarray(v, dtype=float))
            if vec.shape != (len(key),):
                raise InvalidSubset(f"weights for {subset_key(key)} must have length {len(key)}")
            out[key] = _frozen(vec)
        object.__setattr__(self, "lambdas", MappingProxyType(out))

    def __getitem__(self, subset) -> np.ndarray:
        return self.lambdas[tuple(subset)]

    def __eq__(self, other):
        if not isinstance(other, WeightScheme) or self.lambdas.keys() != other.lambdas.keys():
            return False
        return all(np.array_equal(v, other.lambdas[s]) for s, v in self.lambdas.items())

    def combined(self, k: int) -> np.ndarray:
        """``sum_I P_I^T lambda_I``; equals ``a`` for an unbiased scheme."""
        out = np.zeros(k)
        for s, v in self.lambdas.items():
            out[np.asarray(s) - 1] += v
        return out

    def residual(self, target: TargetSpec) -> float:
        return float(np.max(np.abs(self.combined(target.k) - target.a)))

    def to_dict(self) -> dict:
        return {subset_key(s): [float(x) for x in v] for s, v in self.lambdas.items()}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "WeightScheme":
        return cls(json.loads(text))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``n_I`` observations of the coordinates in ``subset``; rows are aligned
    with the sorted subset."""

    subset: Subset
    rows: np.ndarray

    def __post_init__(self):
        key = parse_subset(self.subset) if isinstance(self.subset, str) else canonical_subset(self.subset)
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1 and len(key) == 1:
            rows = rows.reshape(-1, 1)
        if rows.ndim != 2 or rows.shape[1] != len(key):
            raise InvalidSubset(f"rows for {subset_key(key)} must have width {len(key)}, got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise NonfiniteEntry(f"batch {subset_key(key)} has missing or non-finite values")
        object.__setattr__(self, "subset", key)
        object.__setattr__(self, "rows", _frozen(rows))

    @property
    def n(self) -> int:
        return self.rows.shape[0]
