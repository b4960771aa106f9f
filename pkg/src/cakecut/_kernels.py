"""Compiled inner loops. Everything here is nogil so harness threads overlap."""
import numpy as np
from numba import njit

_EPS = np.finfo(np.float64).eps


@njit(cache=True, nogil=True)
def jacobi_singular_values(a, max_sweeps):
    """One-sided (Hestenes) Jacobi on the rows of ``a``.

    Rotates row pairs until every pair is numerically orthogonal; the row
    norms are then the singular values. Returns (values descending, sweeps);
    sweeps == -1 means the cap was hit.
    """
    g = a.copy()
    n, m = g.shape
    tol = _EPS * np.sqrt(max(m, 1))
    fro2 = 0.0
    for i in range(n):
        for k in range(m):
            fro2 += g[i, k] * g[i, k]
    # rows this small are rounding noise of a rank-deficient matrix; rotating
    # them against each other never settles
    floor = (_EPS * _EPS) * fro2
    sweeps = -1
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    x = g[p, k]
                    y = g[q, k]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha) * np.sqrt(beta):
                    continue
                if alpha <= floor or beta <= floor:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = 1.0 / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                    if zeta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    x = g[p, k]
                    y = g[q, k]
                    g[p, k] = c * x - s * y
                    g[q, k] = s * x + c * y
        if not rotated:
            sweeps = sweep + 1
            break
    sv = np.empty(n)
    for i in range(n):
        acc = 0.0
        scale = 0.0
        for k in range(m):
            scale = max(scale, abs(g[i, k]))
        if scale > 0.0:
            for k in range(m):
                z = g[i, k] / scale
                acc += z * z
            sv[i] = scale * np.sqrt(acc)
        else:
            sv[i] = 0.0
    return -np.sort(-sv), sweeps


@njit(cache=True, nogil=True)
def lu_decompose(a):
    """Partial-pivoting LU in place on a copy.

    Returns (lu, perm, sign, min_abs_pivot). Zero pivot columns are skipped,
    leaving a zero on the diagonal.
    """
    lu = a.copy()
    n = lu.shape[0]
    perm = np.arange(n)
    sign = 1.0
    min_piv = np.inf
    for k in range(n):
        p = k
        best = abs(lu[k, k])
        for i in range(k + 1, n):
            if abs(lu[i, k]) > best:
                best = abs(lu[i, k])
                p = i
        min_piv = min(min_piv, best)
        if best == 0.0:
            continue
        if p != k:
            for j in range(n):
                tmp = lu[k, j]
                lu[k, j] = lu[p, j]
                lu[p, j] = tmp
            tmp_i = perm[k]
            perm[k] = perm[p]
            perm[p] = tmp_i
            sign = -sign
        piv = lu[k, k]
        for i in range(k + 1, n):
            f = lu[i, k] / piv
            lu[i, k] = f
            if f != 0.0:
                for j in range(k + 1, n):
                    lu[i, j] -= f * lu[k, j]
    return lu, perm, sign, min_piv


@njit(cache=True, nogil=True)
def lu_inverse(lu, perm):
    n = lu.shape[0]
    inv = np.zeros((n, n))
    col = np.empty(n)
    for c in range(n):
        for i in range(n):
            col[i] = 1.0 if perm[i] == c else 0.0
        for i in range(n):
            acc = col[i]
            for j in range(i):
                acc -= lu[i, j] * col[j]
            col[i] = acc
        for i in range(n - 1, -1, -1):
            acc = col[i]
            for j in range(i + 1, n):
                acc -= lu[i, j] * col[j]
            col[i] = acc / lu[i, i]
        for i in range(n):
            inv[i, c] = col[i]
    return inv


@njit(cache=True, nogil=True)
def greedy_assign(values, ratios, allowed):
    """Assign pieces (columns of ``values``) to buckets one at a time.

    ``values[i, k]`` is piece k's value to player i, already divided by the
    player's value of the whole. Each piece goes to the allowed bucket that
    most reduces the sum of squared deviations sum_ij (S_ij - r_j P_i)^2,
    where P_i is the value processed so far.
    """
    n, m = values.shape
    nb = ratios.size
    dev = np.zeros((n, nb))
    out = np.empty(m, dtype=np.int64)
    for k in range(m):
        best = -1
        best_score = np.inf
        for j in range(nb):
            if not allowed[j]:
                continue
            score = 0.0
            for i in range(n):
                v = values[i, k]
                score += v * (dev[i, j] - v * ratios[j])
            if score < best_score:
                best_score = score
                best = j
        out[k] = best
        for i in range(n):
            v = values[i, k]
            if v == 0.0:
                continue
            for j in range(nb):
                dev[i, j] -= v * ratios[j]
            dev[i, best] += v
    return out
