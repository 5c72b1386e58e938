"""Independent reference implementations used only by the tests.

None of these share code with the package beyond plain numpy.
"""
import itertools

import numpy as np


def random_spd(rng, k, floor=0.1):
    a = rng.normal(size=(k, k))
    return a @ a.T + floor * np.eye(k)


def powerset(k):
    return [c for r in range(1, k + 1) for c in itertools.combinations(range(1, k + 1), r)]


def embedded_inverses(sigma, subsets):
    k = sigma.shape[0]
    out = np.zeros((len(subsets), k, k))
    for i, s in enumerate(subsets):
        idx = np.asarray(s) - 1
        out[i][np.ix_(idx, idx)] = np.linalg.inv(sigma[np.ix_(idx, idx)])
    return out


def variance_of_counts(sigma, a, subsets, counts):
    """``a^T M^+ a`` for each row of ``counts`` (R x p); inf where ``a`` is uncovered.

    Uncovered coordinates get a unit diagonal so the batch is invertible; since
    M has zero rows and columns there and ``a`` vanishes there, this equals the
    pseudo-inverse form.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    q = embedded_inverses(sigma, subsets)
    k = sigma.shape[0]
    member = np.zeros((len(subsets), k))
    for i, s in enumerate(subsets):
        member[i, np.asarray(s) - 1] = 1.0
    covered = (counts > 0) @ member > 0
    m = np.einsum("rp,pij->rij", counts, q)
    m += np.einsum("ri,ij->rij", (~covered).astype(float), np.eye(k))
    ok = np.all(covered | (a == 0), axis=1)
    out = np.full(counts.shape[0], np.inf)
    if np.any(ok):
        rhs = np.broadcast_to(a, (int(ok.sum()), k))[..., None]
        w = np.linalg.solve(m[ok], rhs)[..., 0]
        out[ok] = w @ a
    return out


def maximal_allocations(costs, budget):
    """All integer allocations where the last subset takes every remaining unit.

    Adding samples never raises the variance, so the integer optimum is
    attained among these.
    """
    costs = np.asarray(costs, dtype=float)
    rows = np.zeros((1, 0), dtype=np.int64)
    left = np.array([float(budget)])
    for c in costs[:-1]:
        cap = np.floor(left / c + 1e-9).astype(np.int64)
        reps = cap + 1
        base = np.repeat(rows, reps, axis=0)
        offs = np.concatenate([np.arange(r) for r in reps])
        rows = np.column_stack([base, offs])
        left = np.repeat(left, reps) - offs * c
    last = np.floor(left / costs[-1] + 1e-9).astype(np.int64)
    return np.column_stack([rows, last])


def integer_optimum(sigma, a, subsets, costs, budget, chunk=200000):
    """Exhaustive minimum of ``a^T M(n)^+ a`` over integer ``n`` with ``c . n <= B``."""
    allocs = maximal_allocations(costs, budget)
    best, arg = np.inf, None
    for start in range(0, allocs.shape[0], chunk):
        part = allocs[start:start + chunk]
        v = variance_of_counts(sigma, a, subsets, part)
        i = int(np.argmin(v))
        if v[i] < best:
            best, arg = float(v[i]), part[i]
    return best, arg


def sdp_optimum(sigma, a, subsets, costs, budgets):
    """Continuous optimum via the Schur-complement SDP in cvxpy."""
    import cvxpy as cp

    q = embedded_inverses(sigma, subsets)
    costs = np.asarray(costs, dtype=float).reshape(len(subsets), -1)
    k, p = sigma.shape[0], len(subsets)
    nu = cp.Variable(p, nonneg=True)
    t = cp.Variable()
    m = sum(nu[i] * q[i] for i in range(p))
    a_col = a.reshape(-1, 1)
    block = cp.bmat([[m, a_col], [a_col.T, cp.reshape(t, (1, 1), order="C")]])
    cons = [0.5 * (block + block.T) >> 0, costs.T @ nu <= np.asarray(budgets, dtype=float)]
    prob = cp.Problem(cp.Minimize(t), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(prob.value), np.asarray(nu.value)


def ledoit_wolf_literal(x):
    """Shrinkage written straight from its definition with explicit loops."""
    x = np.asarray(x, dtype=float)
    n, k = x.shape
    xc = x - x.mean(axis=0)
    s = sum(np.outer(r, r) for r in xc) / n
    m = np.trace(s) / k
    d2 = np.sum((s - m * np.eye(k)) ** 2)
    b_bar2 = sum(np.sum((np.outer(r, r) - s) ** 2) for r in xc) / n**2
    b2 = min(b_bar2, d2)
    delta = b2 / d2 if d2 > 0 else 0.0
    return (1 - delta) * s + delta * m * np.eye(k), delta


def explained_variance(sigma, subset):
    idx = np.asarray(subset) - 1
    c = sigma[0, idx]
    return float(c @ np.linalg.solve(sigma[np.ix_(idx, idx)], c))
