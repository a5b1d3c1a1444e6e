"""Dense linear-algebra kernels used by every combiner.

Thin SVD, symmetric and generalized symmetric-definite eigendecompositions,
Cholesky factorization, column centering and row normalization.  All
arithmetic is 64-bit.  The heavy factorizations are backed by LAPACK (via
numpy) with a deterministic ordering and sign convention layered on top:
eigenvalues are sorted descending with ties kept in backend output order, and
each eigenvector is flipped so its largest-magnitude entry is positive.  That
makes fitted model files reproducible across runs.

Every function here is pure: inputs are never mutated and there is no shared
state, so calls are safe from concurrent workers.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, NotPositiveDefiniteError, ValidationError, ZeroRowWarning

__all__ = [
    "EigenResult",
    "as_matrix",
    "thin_svd",
    "sym_eig_desc",
    "cholesky",
    "gen_sym_eig",
    "column_means_and_center",
    "l2_normalize_rows",
]

# Rows whose squared norm is already this close to 1 are passed through
# untouched, which makes repeated normalization bit-for-bit idempotent.
_UNIT_SKIP_TOL = 5e-13


class EigenResult(NamedTuple):
    """Eigenvalues sorted descending and the matching eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return *a* as a 2-d float64 array.

    Requires at least one row and one column and all entries finite.
    Raises :class:`ValidationError` otherwise.  The result is a new array
    (never a view of the input), so callers may mutate it freely.
    """
    m = np.array(a, dtype=np.float64, order="C", copy=True)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"{name} must have at least one row and column, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    return m


def _check_symmetric(a: np.ndarray, name: str) -> None:
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    tol = 1e-10 * max(1.0, float(np.max(np.abs(a))))
    if asym > tol:
        raise ValidationError(f"{name} is not symmetric: max asymmetry {asym:.6g}")


def _check_square(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")


def _fix_column_signs(v: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[lead, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def thin_svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin singular value decomposition m = u @ diag(s) @ v.T.

    Returns (u, s, v) with u of shape (rows, r), v of shape (cols, r),
    r = min(rows, cols), and s non-negative sorted descending.  Columns of
    u and v are orthonormal.
    """
    a = as_matrix(m)
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            "thin SVD did not converge within the backend iteration cap "
            f"(LAPACK gesdd, 30 sweeps per superdiagonal): {exc}"
        ) from exc
    return u, s, vh.T


def sym_eig_desc(a) -> EigenResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Satisfies ``a @ vec = val * vec`` within 1e-8 * (1 + |val|) per pair and
    returns orthonormal eigenvectors.  Ties between equal eigenvalues keep
    the backend's output order; signs are fixed so each eigenvector's
    largest-magnitude entry is positive.
    """
    m = as_matrix(a)
    _check_square(m, "matrix")
    _check_symmetric(m, "matrix")
    values, vectors = np.linalg.eigh(m)
    order = np.argsort(-values, kind="stable")
    return EigenResult(values[order], _fix_column_signs(vectors[:, order]))


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T = a for symmetric positive definite a.

    Raises :class:`NotPositiveDefiniteError` naming the failing pivot index
    when the input is not positive definite.
    """
    m = as_matrix(a)
    _check_square(m, "matrix")
    _check_symmetric(m, "matrix")
    n = m.shape[0]
    low = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - low[j, :j] @ low[j, :j]
        if not np.isfinite(pivot) or pivot <= 0.0:
            raise NotPositiveDefiniteError(j, float(pivot))
        ljj = np.sqrt(pivot)
        low[j, j] = ljj
        if j + 1 < n:
            low[j + 1 :, j] = (m[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / ljj
    return low


def gen_sym_eig(c, b) -> EigenResult:
    """Solve c @ vec = val * b @ vec for symmetric c and SPD b.

    Implemented by whitening: with L = cholesky(b), the problem reduces to an
    ordinary symmetric eigenproblem on L^-1 @ c @ L^-T whose eigenvectors are
    mapped back through L^-T.  Eigenvalues come out descending; sign and tie
    conventions follow :func:`sym_eig_desc`.
    """
    cm = as_matrix(c, "c")
    bm = as_matrix(b, "b")
    _check_square(cm, "c")
    _check_square(bm, "b")
    if cm.shape != bm.shape:
        raise ValidationError(f"c and b must have the same shape, got {cm.shape} and {bm.shape}")
    _check_symmetric(cm, "c")
    _check_symmetric(bm, "b")
    low = cholesky(bm)
    half = scipy.linalg.solve_triangular(low, cm, lower=True)
    whitened = scipy.linalg.solve_triangular(low, half.T, lower=True).T
    # exact-arithmetic symmetry is lost to rounding; restore it before eigh
    whitened = 0.5 * (whitened + whitened.T)
    values, white_vectors = sym_eig_desc(whitened)
    vectors = scipy.linalg.solve_triangular(low.T, white_vectors, lower=False)
    return EigenResult(values, _fix_column_signs(vectors))


def column_means_and_center(m) -> tuple[np.ndarray, np.ndarray]:
    """Column means of *m* and the column-centered copy.

    Centering is done in two sweeps so the centered column means are zero to
    machine precision even for large-magnitude data.
    """
    a = as_matrix(m)
    means = a.mean(axis=0)
    centered = a - means
    correction = centered.mean(axis=0)
    centered -= correction
    return means + correction, centered


def l2_normalize_rows(m) -> np.ndarray:
    """Scale each row of *m* to unit Euclidean norm.

    Zero rows are passed through unchanged with a :class:`ZeroRowWarning`
    (out-of-vocabulary placeholders may legitimately be zero).  Rows already
    unit-norm within 2.5e-13 are returned untouched, so applying the function
    twice is bit-for-bit the same as applying it once.
    """
    a = as_matrix(m)
    sq = np.einsum("ij,ij->i", a, a)
    zero = sq == 0.0
    skip = np.abs(sq - 1.0) <= _UNIT_SKIP_TOL
    scale = np.ones_like(sq)
    active = ~(zero | skip)
    scale[active] = 1.0 / np.sqrt(sq[active])
    if np.any(zero):
        warnings.warn(
            f"{int(zero.sum())} zero row(s) passed through un-normalized",
            ZeroRowWarning,
            stacklevel=2,
        )
    return a * scale[:, None]
