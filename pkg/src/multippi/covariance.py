"""Covariance estimation from fully-labeled samples."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import NonfiniteEntry, TooFewSamples
from .model import CovarianceMatrix


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise TooFewSamples(f"samples must be a 2-D array, got shape {x.shape}")
    if x.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonfiniteEntry("samples contain missing or non-finite values")
    return x


def empirical_covariance(samples, divisor: str = "N") -> CovarianceMatrix:
    """Centered second-moment matrix with divisor ``N`` or ``N-1``.

    Args:
        samples: N x k array, one observation per row.
        divisor: ``"N"`` or ``"N-1"``.
    """
    x = _check_samples(samples)
    n = x.shape[0]
    if divisor not in ("N", "N-1"):
        raise ValueError(f"divisor must be 'N' or 'N-1', got {divisor!r}")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / (n if divisor == "N" else n - 1)
    return CovarianceMatrix(0.5 * (s + s.T))


@dataclass(frozen=True)
class LedoitWolfResult:
    sigma_lw: CovarianceMatrix
    shrinkage: float
    target_scale: float
    b2: float
    d2: float

    @property
    def a2(self) -> float:
        return self.d2 - self.b2


def ledoit_wolf(samples) -> LedoitWolfResult:
    """Shrink the empirical covariance towards ``m I`` with ``m = tr(S)/k``.

    Uses divisor N throughout. The intensity is ``b^2 / d^2`` where
    ``d^2 = ||S - m I||_F^2`` and ``b^2`` is the average squared Frobenius
    distance of the centered outer products to ``S`` divided by N, clipped
    at ``d^2``. A spherical ``S`` (``d^2 = 0``) gets zero shrinkage.
    """
    x = _check_samples(samples)
    n, k = x.shape
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / n
    s = 0.5 * (s + s.T)
    m = np.trace(s) / k
    d2 = float(np.sum((s - m * np.eye(k)) ** 2))
    # sum_j ||x_j x_j^T - S||_F^2 = sum_j ||x_j||^4 - N ||S||_F^2 for centered rows
    sq = np.einsum("ij,ij->i", xc, xc)
    b_bar2 = max(float(np.sum(sq**2) - n * np.sum(s**2)), 0.0) / n**2
    b2 = min(b_bar2, d2)
    delta = b2 / d2 if d2 > 0 else 0.0
    lw = (1.0 - delta) * s + delta * m * np.eye(k)
    return LedoitWolfResult(CovarianceMatrix(lw), float(delta), float(m), float(b2), d2)


def estimate_covariance(samples, method: str = "ledoit_wolf", divisor: str = "N-1") -> CovarianceMatrix:
    """Dispatch on ``method`` in {"ledoit_wolf", "empirical"}.

    ``divisor`` applies to the empirical estimator only.
    """
    if method == "ledoit_wolf":
        return ledoit_wolf(samples).sigma_lw
    if method == "empirical":
        return empirical_covariance(samples, divisor)
    raise ValueError(f"unknown covariance method {method!r}")


def read_samples_csv(text: str):
    """Parse a CSV with a header row of variable names; returns (names, N x k array)."""
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if not rows:
        raise TooFewSamples("empty CSV")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise NonfiniteEntry(f"non-numeric or missing value: {exc}") from exc
    if body and data.shape[1] != len(header):
        raise NonfiniteEntry("row width does not match header")
    if data.size and not np.all(np.isfinite(data)):
        raise NonfiniteEntry("CSV contains non-finite values")
    return header, data.reshape(len(body), len(header))
