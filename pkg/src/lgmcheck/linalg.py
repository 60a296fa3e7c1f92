"""Symmetric positive definite factorizations, solves and log-determinants.

One entry point (:func:`cholesky`) serves three storage regimes behind the
same ``CholFactor`` interface: dense arrays, banded sparse matrices (the
common case for chain-structured precisions) and general sparse matrices
above the dense size limit.  Factors are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, NotPositiveDefinite

RIDGE_EPS = 1e-8
DENSE_LIMIT = 2000
BAND_LIMIT = 64


def _as_dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)


def check_symmetric(m, tol: float = 1e-12) -> None:
    """Raise if ``m`` is not symmetric within ``tol`` relative."""
    if sp.issparse(m):
        d = abs(m - m.T)
        num = d.max() if d.nnz else 0.0
        scale = abs(m).max() or 1.0
    else:
        m = np.asarray(m, dtype=float)
        num = np.abs(m - m.T).max() if m.size else 0.0
        scale = np.abs(m).max() or 1.0
    if not np.isfinite(scale):
        raise NotPositiveDefinite("matrix contains non-finite entries")
    if num > tol * max(scale, 1.0):
        raise DimensionMismatch(f"matrix not symmetric: |A-A'| = {num:g}")


def _bandwidth(m: sp.spmatrix) -> int:
    coo = m.tocoo()
    if coo.nnz == 0:
        return 0
    return int(np.abs(coo.row - coo.col).max())


@dataclass(frozen=True)
class CholFactor:
    """Cholesky-type factor of an SPD matrix.

    ``solve`` applies the full inverse; ``half_solve_t`` applies ``L^{-T}``
    (used to turn i.i.d. normals into draws with the factored precision) and
    is available for the dense and banded paths only.
    """

    order: int
    logdet: float
    ridge: float
    kind: str
    _solve: Callable = field(repr=False)
    _half_solve_t: Callable | None = field(repr=False, default=None)
    _lower: Callable | None = field(repr=False, default=None)

    def solve(self, rhs):
        """Return ``M^{-1} rhs`` for a vector or matrix right-hand side."""
        rhs = np.asarray(rhs, dtype=float)
        n = rhs.shape[0]
        if n != self.order:
            raise DimensionMismatch(
                f"rhs has leading dimension {n}, factor order is {self.order}"
            )
        return self._solve(rhs)

    def half_solve_t(self, rhs):
        """Return ``L^{-T} rhs`` where ``M = L L^T``."""
        if self._half_solve_t is None:
            raise NotImplementedError(f"half solve unavailable for {self.kind} factor")
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.order:
            raise DimensionMismatch("rhs does not conform")
        return self._half_solve_t(rhs)

    def lower(self) -> np.ndarray:
        """Dense lower-triangular factor (test/diagnostic use)."""
        if self._lower is None:
            raise NotImplementedError(f"dense factor unavailable for {self.kind}")
        return self._lower()


def _dense_factor(a: np.ndarray, ridge: float) -> CholFactor:
    try:
        c, low = sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    d = np.diag(c)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise NotPositiveDefinite("non-positive pivot in dense factorization")
    logdet = 2.0 * float(np.sum(np.log(d)))
    L = np.tril(c)

    def solve(rhs):
        return sla.cho_solve((c, low), rhs, check_finite=False)

    def half_solve_t(rhs):
        return sla.solve_triangular(L, rhs, lower=True, trans="T", check_finite=False)

    return CholFactor(a.shape[0], logdet, ridge, "dense", solve, half_solve_t,
                      lambda: L.copy())


def _banded_factor(m: sp.spmatrix, bw: int, ridge: float) -> CholFactor:
    n = m.shape[0]
    ab = np.zeros((bw + 1, n))
    lo = sp.tril(m, format="coo")
    for i, j, v in zip(lo.row, lo.col, lo.data):
        ab[i - j, j] = v
    try:
        cb = sla.cholesky_banded(ab, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    d = cb[0]
    if np.any(d <= 0):
        raise NotPositiveDefinite("non-positive pivot in banded factorization")
    logdet = 2.0 * float(np.sum(np.log(d)))

    def solve(rhs):
        return sla.cho_solve_banded((cb, True), rhs, check_finite=False)

    def half_solve_t(rhs):
        # L^T stored in upper "matrix diagonal ordered" form for solve_banded
        ut = np.zeros_like(cb)
        for k in range(cb.shape[0]):
            ut[bw - k, k:] = cb[k, : n - k]
        return sla.solve_banded((0, bw), ut, rhs, check_finite=False)

    def lower():
        L = np.zeros((n, n))
        for k in range(cb.shape[0]):
            idx = np.arange(n - k)
            L[idx + k, idx] = cb[k, : n - k]
        return L

    return CholFactor(n, logdet, ridge, "banded", solve, half_solve_t, lower)


def _splu_factor(m: sp.spmatrix, ridge: float) -> CholFactor:
    lu = spla.splu(m.tocsc())
    du = lu.U.diagonal()
    if np.any(du <= 0):
        raise NotPositiveDefinite("non-positive pivot in sparse LU")
    logdet = float(np.sum(np.log(du)))

    def solve(rhs):
        return lu.solve(rhs)

    return CholFactor(m.shape[0], logdet, ridge, "splu", solve)


def cholesky(m, *, ridge: float = 0.0) -> CholFactor:
    """Factor an SPD matrix, dispatching on storage and size.

    Raises :class:`NotPositiveDefinite` when a pivot fails.  ``ridge`` is a
    value already added by the caller; it is recorded in the factor for
    provenance but not applied here (see :func:`ridged_cholesky`).
    """
    if sp.issparse(m):
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch("matrix not square")
        bw = _bandwidth(m)
        if bw <= BAND_LIMIT:
            return _banded_factor(m, bw, ridge)
        if m.shape[0] <= DENSE_LIMIT:
            return _dense_factor(m.toarray(), ridge)
        return _splu_factor(m, ridge)
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("matrix not square")
    return _dense_factor(a, ridge)


def ridged_cholesky(m, eps: float = RIDGE_EPS) -> CholFactor:
    """Factor ``m``; on failure retry once with ``eps * mean(diag)`` added.

    Intrinsic prior precisions (rank n-1) land here; the ridge used is
    recorded on the returned factor.
    """
    try:
        return cholesky(m)
    except NotPositiveDefinite:
        pass
    diag = m.diagonal() if sp.issparse(m) else np.diag(np.asarray(m, dtype=float))
    delta = eps * float(np.mean(np.abs(diag)))
    if delta <= 0.0:
        delta = eps
    if sp.issparse(m):
        mr = (m + delta * sp.identity(m.shape[0], format=m.format)).tocsc()
    else:
        mr = np.asarray(m, dtype=float) + delta * np.eye(m.shape[0])
    return cholesky(mr, ridge=delta)


def solve(f: CholFactor, rhs):
    """Solve ``M x = rhs`` for the matrix behind factor ``f``."""
    return f.solve(rhs)


def posterior_cov_block(f: CholFactor, left, right):
    """Return ``left @ M^{-1} @ right.T`` for selector matrices left/right."""
    left = np.atleast_2d(np.asarray(left, dtype=float))
    right = np.atleast_2d(np.asarray(right, dtype=float))
    if left.shape[1] != f.order or right.shape[1] != f.order:
        raise DimensionMismatch("selector column count must equal factor order")
    return left @ f.solve(right.T)
