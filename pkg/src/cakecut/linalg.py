"""Witness-matrix algebra for Webb's algorithm, singular values, and bound calculators.

Matrices are plain square ``numpy`` float arrays. A *stochastic* matrix here
means non-negative entries with unit row sums.
"""
from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DomainError, InvariantViolation, SingularError

SINGULAR_TOL = 1e-12
STOCHASTIC_TOL = 1e-12
SIGMA_BOUND_MIN_N = 19


def as_square(m) -> np.ndarray:
    a = np.array(m, dtype=float, order="C")
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DomainError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return a


def is_stochastic(m, tol: float = STOCHASTIC_TOL) -> bool:
    a = as_square(m)
    return bool(np.all(a >= 0) and np.all(np.abs(a.sum(axis=1) - 1.0) <= tol))


def check_stochastic(m, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    a = as_square(m)
    if np.any(a < 0):
        raise DomainError("stochastic matrix has a negative entry")
    worst = float(np.max(np.abs(a.sum(axis=1) - 1.0)))
    if worst > tol:
        raise DomainError(f"row sums deviate from 1 by {worst:.3g}")
    return a


def singular_values(m) -> np.ndarray:
    """All singular values, largest first, by one-sided Jacobi rotations."""
    a = as_square(m)
    n = a.shape[0]
    cap = 100 * n
    sv, sweeps = _kernels.jacobi_singular_values(a, cap)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi SVD did not converge in {cap} sweeps")
    return sv


def smallest_singular_value(m) -> float:
    return float(singular_values(m)[-1])


def _lu(m):
    a = as_square(m)
    lu, perm, sign, min_piv = _kernels.lu_decompose(a)
    return a, lu, perm, sign, min_piv


def determinant(m) -> float:
    _, lu, _, sign, min_piv = _lu(m)
    if min_piv == 0.0:
        return 0.0
    return float(sign * np.prod(np.diag(lu)))


def invert(m, check_sigma: bool = True) -> np.ndarray:
    """Inverse by row-pivoted elimination.

    Raises :class:`SingularError` when the smallest pivot relative to the
    largest entry, or sigma_n / sigma_1, drops below 1e-12.
    """
    a, lu, perm, _, min_piv = _lu(m)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0 or min_piv / scale < SINGULAR_TOL:
        raise SingularError(f"pivot ratio {min_piv / scale if scale else 0.0:.3g} below {SINGULAR_TOL}")
    if check_sigma:
        sv = singular_values(a)
        if sv[-1] < SINGULAR_TOL * sv[0]:
            raise SingularError(f"sigma_n / sigma_1 = {sv[-1] / sv[0]:.3g} below {SINGULAR_TOL}")
    return _kernels.lu_inverse(lu, perm)


def min_entry(m) -> float:
    return float(np.min(as_square(m)))


def delta(n: int, t: float) -> float:
    """Webb's target gap (n-1) / (n(1 - t n)); needs t <= 0."""
    if n < 2:
        raise DomainError("delta needs n >= 2")
    if t > 0:
        raise DomainError(f"t = {t} > 0: not the inverse of a witness matrix")
    return (n - 1) / (n * (1.0 - t * n))


def target_matrix(n: int, d: float) -> np.ndarray:
    """1/n + d on the diagonal, 1/n - d/(n-1) elsewhere."""
    if n == 1:
        return np.ones((1, 1))
    if not (0 < d <= (n - 1) / n * (1 + 1e-15)):
        raise DomainError(f"d = {d} outside (0, (n-1)/n]")
    off = max(1.0 / n - d / (n - 1), 0.0)
    out = np.full((n, n), off)
    np.fill_diagonal(out, 1.0 / n + d)
    return out


def ratio_matrix(m_inv, n_mat) -> np.ndarray:
    """R = M^{-1} N, checked to be stochastic up to rounding.

    Every row of M^{-1} sums to 1 when M is stochastic. If N is Webb's target
    for t = min M^{-1}, the product simplifies to R = (M^{-1} - t J) / (1 - t n),
    whose smallest entry is exactly zero and whose rows sum to 1; that form is
    used whenever N matches. Otherwise a constant-off-diagonal N = a J + c I
    gives R = a J + c M^{-1}, and a general N falls back to the plain product.
    """
    inv = as_square(m_inv)
    nm = as_square(n_mat)
    n = inv.shape[0]
    if nm.shape != inv.shape:
        raise DomainError(f"shape mismatch: {inv.shape} vs {nm.shape}")
    if n == 1:
        return inv @ nm
    t = float(inv.min())
    off = nm[0, 1]
    diag = nm[0, 0]
    offdiag = ~np.eye(n, dtype=bool)
    structured = np.all(np.abs(nm[offdiag] - off) <= 1e-15) and np.all(np.abs(np.diag(nm) - diag) <= 1e-15)
    if structured and t <= 0 and np.allclose(nm, target_matrix(n, delta(n, t)), rtol=0, atol=1e-15):
        r = (inv - t) / (1.0 - t * n)
    elif structured:
        r = off + (diag - off) * inv
    else:
        r = inv @ nm
    worst_sum = float(np.max(np.abs(r.sum(axis=1) - 1.0)))
    lo = float(r.min())
    if worst_sum > 1e-9:
        raise InvariantViolation(f"R row sums off by {worst_sum:.3g}")
    if lo < -1e-12:
        raise InvariantViolation(f"R has negative entry {lo:.3g}; delta does not match min of M^-1")
    return r


class QueryBound(NamedTuple):
    value: float
    in_range: bool


def webb_query_bound(n: int, t: float) -> float:
    """n^5 (2 + 2 n^{3/2}) (1 - t n) / (n - 1)."""
    if n < 2:
        raise DomainError("webb_query_bound needs n >= 2")
    if t > 0:
        raise DomainError(f"t = {t} > 0")
    return n ** 5 * (2 + 2 * n ** 1.5) * (1 - t * n) / (n - 1)


def sigma_query_bound(n: int, sigma_n: float) -> QueryBound:
    """n^7 max(1, 1/sigma_n); ``in_range`` is False for n < 19 where the bound is not proven."""
    if not sigma_n > 0:
        raise DomainError(f"sigma_n = {sigma_n} must be positive")
    return QueryBound(float(n) ** 7 * max(1.0, 1.0 / sigma_n), n >= SIGMA_BOUND_MIN_N)


def tail_exponent(b):
    """-(b-1)/3 + 1, exact as a Fraction when b is an int or Fraction."""
    if b <= 4:
        raise DomainError(f"b = {b} must exceed 4")
    if isinstance(b, (int, Fraction)) and not isinstance(b, bool):
        return -Fraction(b - 1, 3) + 1
    return -(b - 1) / 3 + 1


def matrix_to_dict(m) -> dict:
    a = as_square(m)
    return {"n": a.shape[0], "rows": a.tolist()}


def matrix_from_dict(obj: dict) -> np.ndarray:
    a = as_square(obj["rows"])
    if "n" in obj and obj["n"] != a.shape[0]:
        raise DomainError(f"declared n={obj['n']} but rows give {a.shape[0]}")
    return a
