"""Compiled log-barrier Newton kernels for the allocation problems.

Both kernels run on dense arrays restricted to the coordinates covered by
the subset family, so every matrix they factor is positive definite.
"""
import numpy as np
from numba import njit

_ARMIJO = 0.25
_FULL_STEP_DECREMENT = 1e-3


@njit(cache=True)
def _cholesky(A):
    """Lower factor of a small SPD matrix; returns a flag instead of raising."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return L, False
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            v = A[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / L[j, j]
    return L, True


@njit(cache=True)
def _chol_solve(L, b):
    n = L.shape[0]
    x = b.copy()
    for i in range(n):
        for k in range(i):
            x[i] -= L[i, k] * x[k]
        x[i] /= L[i, i]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            x[i] -= L[k, i] * x[k]
        x[i] /= L[i, i]
    return x


@njit(cache=True)
def _spd_solve(A, b):
    """Solve ``A x = b`` for SPD ``A`` after diagonal scaling.

    Near a flat optimum the Newton matrix is PD only through its barrier
    terms, and rounding can break Cholesky; a growing ridge then restores it.
    """
    n = A.shape[0]
    d = np.empty(n)
    for i in range(n):
        d[i] = 1.0 / np.sqrt(A[i, i]) if A[i, i] > 0.0 else 1.0
    S = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            S[i, j] = A[i, j] * d[i] * d[j]
    ridge = 0.0
    for _ in range(30):
        L, ok = _cholesky(S)
        if ok:
            return _chol_solve(L, b * d) * d
        ridge = 1e-14 if ridge == 0.0 else ridge * 10.0
        for i in range(n):
            S[i, i] += ridge
    return np.full(n, np.nan)


@njit(cache=True)
def _variance_at(Qs, nu, a, M, w):
    """Fill ``M = sum nu_i Q_i`` and ``w = M^{-1} a``; return ``a . w`` (inf if singular)."""
    p, k = nu.size, a.size
    for r in range(k):
        for c in range(k):
            acc = 0.0
            for i in range(p):
                acc += nu[i] * Qs[i, r, c]
            M[r, c] = acc
    L, ok = _cholesky(M)
    if not ok:
        return np.inf
    w[:] = _chol_solve(L, a)
    f = 0.0
    for r in range(k):
        f += a[r] * w[r]
    return f


@njit(cache=True)
def _barrier_value(Qs, C, B, a, nu, t, M, w):
    val = 0.0
    for i in range(nu.size):
        if nu[i] <= 0.0:
            return np.inf
        val -= np.log(nu[i])
    for j in range(B.size):
        sl = B[j]
        for i in range(nu.size):
            sl -= C[j, i] * nu[i]
        if sl <= 0.0:
            return np.inf
        val -= np.log(sl)
    f = _variance_at(Qs, nu, a, M, w)
    return val + t * f


@njit(cache=True)
def minimize_variance(Qs, C, B, a, nu0, tol, max_outer, max_inner, mu=10.0, inner_tol=1e-10, t_scale=1.0):
    """Minimize ``a^T (sum_i nu_i Q_i)^{-1} a`` over ``nu > 0, C nu <= B``.

    Returns ``(nu, f, t, newton_steps, outer_steps, converged)``.
    """
    p = nu0.size
    m = B.size
    k = a.size
    nu = nu0.copy()
    M = np.empty((k, k))
    w = np.empty(k)
    Mc = np.empty((k, k))
    wc = np.empty(k)
    G = np.empty((k, p))
    X = np.empty((k, p))
    grad = np.empty(p)
    hess = np.empty((p, p))
    slack = np.empty(m)
    cand = np.empty(p)
    f = _variance_at(Qs, nu, a, M, w)
    if not np.isfinite(f):
        return nu, f, 0.0, 0, 0, False
    t = t_scale / f
    steps = 0
    outer = 0
    converged = False
    for outer in range(max_outer):
        for _ in range(max_inner):
            f = _variance_at(Qs, nu, a, M, w)
            L, ok = _cholesky(M)
            if not ok:
                return nu, f, t, steps, outer, False
            for i in range(p):
                for r in range(k):
                    acc = 0.0
                    for c in range(k):
                        acc += Qs[i, r, c] * w[c]
                    G[r, i] = acc
                X[:, i] = _chol_solve(L, np.ascontiguousarray(G[:, i]))
            for j in range(m):
                sl = B[j]
                for i in range(p):
                    sl -= C[j, i] * nu[i]
                slack[j] = sl
            for i in range(p):
                gi = 0.0
                for r in range(k):
                    gi += w[r] * G[r, i]
                g = -t * gi - 1.0 / nu[i]
                for j in range(m):
                    g += C[j, i] / slack[j]
                grad[i] = g
                for l in range(i + 1):
                    h = 0.0
                    for r in range(k):
                        h += G[r, i] * X[r, l]
                    h *= 2.0 * t
                    for j in range(m):
                        h += C[j, i] * C[j, l] / (slack[j] * slack[j])
                    hess[i, l] = h
                    hess[l, i] = h
                hess[i, i] += 1.0 / (nu[i] * nu[i])
            dx = -_spd_solve(hess, grad)
            dec = 0.0
            for i in range(p):
                dec -= grad[i] * dx[i]
            steps += 1
            if not np.isfinite(dec):
                return nu, f, t, steps, outer, False
            if dec < 1e-2 * inner_tol:
                break
            phi0 = t * f
            for i in range(p):
                phi0 -= np.log(nu[i])
            for j in range(m):
                phi0 -= np.log(slack[j])
            s = 1.0
            accepted = False
            for _ in range(60):
                for i in range(p):
                    cand[i] = nu[i] + s * dx[i]
                val = _barrier_value(Qs, C, B, a, cand, t, Mc, wc)
                if np.isfinite(val) and (dec < _FULL_STEP_DECREMENT or val <= phi0 - _ARMIJO * s * dec):
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                break
            nu[:] = cand
            if dec < inner_tol:
                break
        f = _variance_at(Qs, nu, a, M, w)
        if (p + m) / t <= tol * f:
            converged = True
            break
        t *= mu
    return nu, f, t, steps, outer + 1, converged


@njit(cache=True)
def _phi_y(Qs, c, a, y, t):
    val = -t * (a @ y)
    for i in range(c.size):
        s = c[i] - y @ (Qs[i] @ y)
        if s <= 0.0:
            return np.inf
        val -= np.log(s)
    return val


@njit(cache=True)
def maximize_dual(Qs, c, a, t0, tol, max_outer, max_inner, mu=10.0, inner_tol=1e-10):
    """Maximize ``a^T y`` subject to ``y^T Q_i y <= c_i`` for every i.

    Returns ``(y, slack, t, newton_steps, outer_steps, converged)``.
    """
    k = a.size
    p = c.size
    y = np.zeros(k)
    t = t0
    steps = 0
    outer = 0
    converged = False
    slack = c.copy()
    for outer in range(max_outer):
        for _ in range(max_inner):
            grad = -t * a
            hess = np.zeros((k, k))
            for i in range(p):
                qy = Qs[i] @ y
                slack[i] = c[i] - y @ qy
                grad += 2.0 * qy / slack[i]
                hess += 2.0 * Qs[i] / slack[i] + 4.0 * np.outer(qy, qy) / slack[i] ** 2
            dy = -_spd_solve(hess, grad)
            dec = -(grad @ dy)
            steps += 1
            if not np.isfinite(dec):
                return y, slack, t, steps, outer, False
            if dec < 1e-2 * inner_tol:
                break
            phi0 = _phi_y(Qs, c, a, y, t)
            s = 1.0
            accepted = False
            for _ in range(60):
                cand = y + s * dy
                val = _phi_y(Qs, c, a, cand, t)
                if np.isfinite(val) and (dec < _FULL_STEP_DECREMENT or val <= phi0 - _ARMIJO * s * dec):
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                break
            y = cand
            if dec < inner_tol:
                break
        for i in range(p):
            slack[i] = c[i] - y @ (Qs[i] @ y)
        if p / t <= tol * abs(a @ y):
            converged = True
            break
        t *= mu
    return y, slack, t, steps, outer + 1, converged
