"""Compiled inner loops.

Everything here works on plain float64 arrays with 0-based states and reports
failure through status codes instead of exceptions, so the public wrappers can
raise the package's own error types.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_PIVOT_TOL = 1e-14
_GOLDEN = 0.6180339887498949


# --------------------------------------------------------------------------
# dense LU with partial pivoting


@njit(cache=True)
def lu_factor(A):
    n = A.shape[0]
    LU = A.copy()
    piv = np.arange(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            v = abs(A[i, j])
            if v > scale:
                scale = v
    if not scale > 0.0:
        return LU, piv, False
    for k in range(n):
        p = k
        best = abs(LU[k, k])
        for i in range(k + 1, n):
            v = abs(LU[i, k])
            if v > best:
                best = v
                p = i
        if not best > _PIVOT_TOL * scale:
            return LU, piv, False
        if p != k:
            for j in range(n):
                tmp = LU[k, j]
                LU[k, j] = LU[p, j]
                LU[p, j] = tmp
            tmp_i = piv[k]
            piv[k] = piv[p]
            piv[p] = tmp_i
        inv = 1.0 / LU[k, k]
        for i in range(k + 1, n):
            f = LU[i, k] * inv
            LU[i, k] = f
            if f != 0.0:
                for j in range(k + 1, n):
                    LU[i, j] -= f * LU[k, j]
    return LU, piv, True


@njit(cache=True)
def lu_solve(LU, piv, b):
    n = LU.shape[0]
    x = np.empty(n)
    for i in range(n):
        x[i] = b[piv[i]]
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= LU[i, j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= LU[i, j] * x[j]
        x[i] = s / LU[i, i]
    return x


@njit(cache=True)
def lu_solve_t(LU, piv, b):
    # A = P^T L U, so A^T x = b  <=>  U^T L^T (P x) = b
    n = LU.shape[0]
    y = b.copy()
    for i in range(n):
        s = y[i]
        for j in range(i):
            s -= LU[j, i] * y[j]
        y[i] = s / LU[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, n):
            s -= LU[j, i] * y[j]
        y[i] = s
    x = np.empty(n)
    for i in range(n):
        x[piv[i]] = y[i]
    return x


# --------------------------------------------------------------------------
# stationary distribution and the reparametrized objective


@njit(cache=True)
def build_ad(P):
    d = P.shape[0]
    A = np.empty((d, d))
    for i in range(d - 1):
        for j in range(d):
            A[i, j] = P[j, i]
        A[i, i] -= 1.0
    for j in range(d):
        A[d - 1, j] = 1.0
    return A


@njit(cache=True)
def stationary(P):
    d = P.shape[0]
    LU, piv, ok = lu_factor(build_ad(P))
    if not ok:
        return np.zeros(d), False
    e = np.zeros(d)
    e[d - 1] = 1.0
    pi = lu_solve(LU, piv, e)
    for i in range(d):
        if not np.isfinite(pi[i]):
            return pi, False
    return pi, True


@njit(cache=True)
def psi_value(L, P):
    pi, ok = stationary(P)
    if not ok:
        return -np.inf, False
    s = 0.0
    for i in range(L.shape[0]):
        s += L[i] * pi[i]
    return s, True


@njit(cache=True)
def psi_and_grad(L, P):
    """Psi, its gradient w.r.t. all d*d entries of P, and pi.

    A_d(P) depends on P only through columns 0..d-2 (row i < d-1 of A_d is
    column i of P, minus e_i), so dPsi/dP_ij = -u_j pi_i for j < d-1 with
    A_d^T u = L, and 0 in the last column.
    """
    d = P.shape[0]
    G = np.zeros((d, d))
    LU, piv, ok = lu_factor(build_ad(P))
    if not ok:
        return -np.inf, G, np.zeros(d), False
    e = np.zeros(d)
    e[d - 1] = 1.0
    pi = lu_solve(LU, piv, e)
    u = lu_solve_t(LU, piv, L)
    val = 0.0
    for i in range(d):
        val += L[i] * pi[i]
    for i in range(d):
        for j in range(d - 1):
            G[i, j] = -u[j] * pi[i]
    return val, G, pi, True


@njit(cache=True)
def _segment_value(L, P, D, g):
    return psi_value(L, P + g * D)


@njit(cache=True)
def line_search(L, P, S, tol, n_scan):
    """Maximize Psi on the segment P + g (S - P), g in [0, 1].

    Coarse scan on n_scan equispaced points, then golden-section search on the
    bracket around the best scan point.  Never returns a point worse than g=0.
    """
    D = S - P
    f0, ok0 = psi_value(L, P)
    best_g = 0.0
    best_f = f0
    grid_f = np.empty(n_scan)
    k_best = 0
    for k in range(n_scan):
        g = k / (n_scan - 1.0)
        f, ok = _segment_value(L, P, D, g)
        if not ok:
            f = -np.inf
        grid_f[k] = f
        if f > best_f:
            best_f = f
            best_g = g
            k_best = k
    h = 1.0 / (n_scan - 1.0)
    lo = max(0.0, (k_best - 1) * h)
    hi = min(1.0, (k_best + 1) * h)
    a = lo
    b = hi
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, okc = _segment_value(L, P, D, c)
    if not okc:
        fc = -np.inf
    fe, oke = _segment_value(L, P, D, e)
    if not oke:
        fe = -np.inf
    while b - a > tol:
        if fc >= fe:
            b = e
            e = c
            fe = fc
            c = b - _GOLDEN * (b - a)
            fc, okc = _segment_value(L, P, D, c)
            if not okc:
                fc = -np.inf
        else:
            a = c
            c = e
            fc = fe
            e = a + _GOLDEN * (b - a)
            fe, oke = _segment_value(L, P, D, e)
            if not oke:
                fe = -np.inf
    if fc > best_f:
        best_f = fc
        best_g = c
    if fe > best_f:
        best_f = fe
        best_g = e
    return best_g, best_f


# --------------------------------------------------------------------------
# exact solution of the linearized oracle via its row-decomposed dual
#
#   max  sum_ij C_ij S_ij   s.t.  S row-stochastic,
#                                 sum_i alpha_i D(P'_i. || S_i.) <= r
#
# For a fixed multiplier lam > 0 the rows decouple: eta_i solves
#   lam * sum_j w_ij / (eta_i - C_ij) = 1,   w_ij = alpha_i P'_ij,
# and S_ij = lam w_ij / (eta_i - C_ij).  The entropy E(lam) of S is strictly
# decreasing in lam; the outer loop solves E(lam) = r.


@njit(cache=True)
def _rows_for_lambda(lam, W, gap, s_prev, use_prev):
    """Row roots s_i = eta_i - max_j C_ij for a fixed multiplier.

    Newton's method on the concave increasing map eta -> 1/(lam a_i(eta)),
    started left of the root, converges monotonically.
    Returns (s, b) with b_i = sum_j w_ij / t_ij^2 at the root.
    """
    m, d = W.shape
    s_out = np.empty(m)
    b_out = np.empty(m)
    for i in range(m):
        # left starting point: lam * a_i(s0) >= 1
        wtie = 0.0
        for j in range(d):
            if gap[i, j] == 0.0:
                wtie += W[i, j]
        s = lam * wtie
        if use_prev:
            a = 0.0
            for j in range(d):
                a += W[i, j] / (s_prev[i] + gap[i, j])
            if lam * a >= 1.0 and s_prev[i] > s:
                s = s_prev[i]
        b = 0.0
        for it in range(200):
            a = 0.0
            b = 0.0
            for j in range(d):
                t = s + gap[i, j]
                q = W[i, j] / t
                a += q
                b += q / t
            res = lam * a - 1.0
            if res <= 1e-15:
                break
            step = a * res / b
            if step <= 1e-17 * s:
                break
            s = s + step
        s_out[i] = s
        b_out[i] = b
    return s_out, b_out


@njit(cache=True)
def _entropy_for_rows(lam, alpha, Pp, gap, s):
    # sum_i alpha_i sum_j P'_ij (delta - log1p(delta)),  delta = S/P' - 1;
    # equals the entropy of the row-normalized S up to (row residual)^2.
    m, d = Pp.shape
    E = 0.0
    for i in range(m):
        la = lam * alpha[i]
        acc = 0.0
        for j in range(d):
            t = s[i] + gap[i, j]
            delta = (la - t) / t
            acc += Pp[i, j] * (delta - np.log1p(delta))
        E += alpha[i] * acc
    return E


@njit(cache=True)
def oracle_exact(C, alpha, Pp, r, rtol):
    """Returns (S, eta, s, lam, status); status 0 on success, 2 if C is
    constant along every row (any S is optimal), -1 if no bracket.

    s = eta - max_j C_ij is returned separately since it can underflow
    relative to eta when r is large.

    E(lam) falls from +inf (lam -> 0, S collapses onto row maxima) to 0
    (lam -> inf, S -> P'), so a root of E(lam) = r always exists.
    """
    m, d = C.shape
    cmax = np.empty(m)
    cmin = np.empty(m)
    for i in range(m):
        hi = C[i, 0]
        lo = C[i, 0]
        for j in range(1, d):
            if C[i, j] > hi:
                hi = C[i, j]
            if C[i, j] < lo:
                lo = C[i, j]
        cmax[i] = hi
        cmin[i] = lo
    scale = 0.0
    for i in range(m):
        scale = max(scale, abs(cmax[i]), abs(cmin[i]))
    tie = 1e-13 * max(scale, 1e-300)
    gap = np.empty((m, d))
    W = np.empty((m, d))
    for i in range(m):
        for j in range(d):
            g = cmax[i] - C[i, j]
            gap[i, j] = 0.0 if g <= tie else g
            W[i, j] = alpha[i] * Pp[i, j]

    # every row constant: all feasible S tie, return the anchor
    flat = True
    for i in range(m):
        for j in range(d):
            if gap[i, j] != 0.0:
                flat = False
    if flat:
        return Pp.copy(), cmax.copy(), np.zeros(m), 0.0, 2

    # small-r expansion E ~ sum_i Var_i / (2 lam^2 alpha_i) as a first guess
    v = 0.0
    for i in range(m):
        mean = 0.0
        for j in range(d):
            mean += Pp[i, j] * C[i, j]
        var = 0.0
        for j in range(d):
            var += Pp[i, j] * (C[i, j] - mean) ** 2
        v += var / alpha[i]
    u = 0.5 * np.log(max(v, 1e-300) / (2.0 * r))

    s_prev = np.zeros(m)
    s, b = _rows_for_lambda(np.exp(u), W, gap, s_prev, False)
    E = _entropy_for_rows(np.exp(u), alpha, Pp, gap, s)

    # bracket: E(u_lo) > r >= E(u_hi)
    have_lo = False
    have_hi = False
    u_lo = u
    u_hi = u
    s_hi = s.copy()
    if E > r:
        have_lo = True
        u_lo = u
    else:
        have_hi = True
        u_hi = u
        s_hi = s.copy()
    step = 1.0
    for _ in range(400):
        if have_lo and have_hi:
            break
        if have_lo:
            u = u_lo + step
            s, b = _rows_for_lambda(np.exp(u), W, gap, s, True)
        else:
            u = u_hi - step
            s, b = _rows_for_lambda(np.exp(u), W, gap, s, False)
        E = _entropy_for_rows(np.exp(u), alpha, Pp, gap, s)
        if E > r:
            have_lo = True
            u_lo = u
        else:
            have_hi = True
            u_hi = u
            s_hi = s.copy()
        step *= 2.0
    if not (have_lo and have_hi):
        return np.zeros((m, d)), cmax.copy(), np.zeros(m), 0.0, -1

    # safeguarded Newton in u = log(lam):  dE/du = sum_i 1/(lam^2 b_i) - 1
    u = u_hi
    s = s_hi.copy()
    lam = np.exp(u)
    s, b = _rows_for_lambda(lam, W, gap, s, False)
    E = _entropy_for_rows(lam, alpha, Pp, gap, s)
    for _ in range(200):
        if abs(E - r) <= rtol * r:
            break
        if u_hi - u_lo <= 1e-15 * max(1.0, abs(u_hi)):
            break
        dE = 0.0
        for i in range(m):
            dE += 1.0 / (lam * lam * b[i])
        dE -= 1.0
        u_new = 0.5 * (u_lo + u_hi)
        if dE < 0.0:
            cand = u - (E - r) / dE
            if u_lo < cand < u_hi:
                u_new = cand
        u = u_new
        lam = np.exp(u)
        s, b = _rows_for_lambda(lam, W, gap, s, False)
        E = _entropy_for_rows(lam, alpha, Pp, gap, s)
        if E > r:
            u_lo = u
        else:
            u_hi = u
            s_hi = s.copy()
    if E > r and abs(E - r) > rtol * r:
        # not converged: fall back to the feasible side of the bracket
        u = u_hi
        lam = np.exp(u)
        s = s_hi
    S = np.empty((m, d))
    eta = np.empty(m)
    for i in range(m):
        eta[i] = cmax[i] + s[i]
        for j in range(d):
            S[i, j] = lam * W[i, j] / (s[i] + gap[i, j])
    return S, eta, s, lam, 0


# --------------------------------------------------------------------------
# trajectories


@njit(cache=True)
def walk(cdf, x0, u):
    T = u.shape[0]
    d = cdf.shape[1]
    out = np.empty(T, dtype=np.int64)
    x = x0
    for t in range(T):
        j = 0
        while j < d - 1 and u[t] >= cdf[x, j]:
            j += 1
        out[t] = j
        x = j
    return out


@njit(cache=True)
def walk_counts(cdf, x0, U):
    """Transition counts for many trajectories; U has shape (trials, T)."""
    n, T = U.shape
    d = cdf.shape[1]
    counts = np.zeros((n, d, d), dtype=np.int64)
    for k in range(n):
        x = x0
        for t in range(T):
            j = 0
            while j < d - 1 and U[k, t] >= cdf[x, j]:
                j += 1
            counts[k, x, j] += 1
            x = j
    return counts
