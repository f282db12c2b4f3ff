"""Sparse complex linear algebra: assembly, Dirichlet constraints and solves.

The default solver is a sparse LU factorization (SuperLU through scipy).  A
GMRES path with an incomplete-LU preconditioner sits behind the same
interface for larger problems.
"""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    """The system could not be factorized or solved."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SingularSystemError(LinearSolveError):
    pass


class ConstraintError(ValueError):
    pass


class SparseMatrix:
    """Coordinate-format builder consolidated to CSR on demand.

    Duplicate ``(row, col)`` triplets are summed.
    """

    def __init__(self, n_rows: int, n_cols: int):
        self.n_rows = n_rows
        self.n_cols = n_cols
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    @classmethod
    def from_scipy(cls, A) -> "SparseMatrix":
        A = sp.coo_matrix(A)
        m = cls(*A.shape)
        m.add(A.row, A.col, A.data)
        return m

    def add(self, rows, cols, vals) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=complex), rows.shape).ravel()
        if rows.shape != cols.shape:
            raise ValueError("row and column index arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_rows or cols.min() < 0 or cols.max() >= self.n_cols):
            raise IndexError("triplet index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite matrix entry")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def tocsr(self) -> sp.csr_matrix:
        if self._rows:
            r, c, v = np.concatenate(self._rows), np.concatenate(self._cols), np.concatenate(self._vals)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0, dtype=complex)
        A = sp.coo_matrix((v, (r, c)), shape=(self.n_rows, self.n_cols)).tocsr()
        A.sum_duplicates()
        return A


@dataclass(frozen=True)
class ConstraintSet:
    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dofs, dtype=np.int64).ravel()
        v = np.asarray(self.values, dtype=complex).ravel()
        if d.shape != v.shape:
            raise ConstraintError("constraint dofs and values differ in length")
        order = np.argsort(d, kind="stable")
        d, v = d[order], v[order]
        dup = np.flatnonzero(np.diff(d) == 0)
        if dup.size:
            if np.any(v[dup] != v[dup + 1]):
                raise ConstraintError(f"conflicting prescriptions for dof {int(d[dup[0]])}")
            keep = np.ones(d.size, dtype=bool)
            keep[dup + 1] = False
            d, v = d[keep], v[keep]
        object.__setattr__(self, "dofs", d)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, complex]]) -> "ConstraintSet":
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        d, v = zip(*pairs)
        return cls(np.array(d), np.array(v))

    @classmethod
    def empty(cls) -> "ConstraintSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=complex))

    def __len__(self):
        return int(self.dofs.size)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    method: str = "direct"


def _as_csr(A) -> sp.csr_matrix:
    if isinstance(A, SparseMatrix):
        return A.tocsr()
    return sp.csr_matrix(A, dtype=complex)


def apply_constraints(A, b, c: ConstraintSet):
    """Impose prescribed values on the dofs of ``c``.

    Constrained rows become identity rows carrying the prescribed value, and
    the constrained columns are eliminated symmetrically by moving their
    contribution to the right-hand side.
    """
    A = _as_csr(A)
    b = np.asarray(b, dtype=complex).copy()
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise ValueError("inconsistent system dimensions")
    if len(c) == 0:
        return A, b
    if c.dofs.min() < 0 or c.dofs.max() >= n:
        raise ConstraintError("constrained dof out of range")
    g = np.zeros(n, dtype=complex)
    g[c.dofs] = c.values
    b -= A @ g
    keep = np.ones(n, dtype=complex)
    keep[c.dofs] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    b[c.dofs] = c.values
    return A, b


def relative_residual(A, x, b) -> float:
    A = _as_csr(A)
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def _thread_cap():
    # ELASTOSCOPE_THREADS caps BLAS threads used inside the factorization
    n = os.environ.get("ELASTOSCOPE_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(int(n))


class Factorization:
    """Sparse LU of a square complex matrix, reusable for many right-hand sides.

    The first attempt uses a symmetric minimum-degree ordering with diagonal
    pivots, which keeps fill low for the structurally symmetric saddle-point
    systems.  If a solve cannot reach its tolerance after refinement, the
    matrix is refactored with threshold partial pivoting and the solve repeated.

    ``solve(b, adjoint=True)`` solves with the conjugate transpose, which for a
    complex-symmetric matrix is the same as solving with the conjugated matrix.
    """

    def __init__(self, A, pivoting: bool = False):
        A = _as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        empty_rows = np.flatnonzero(np.diff(A.indptr) == 0)
        empty_cols = np.setdiff1d(np.arange(A.shape[1]), A.indices)
        if empty_rows.size or empty_cols.size:
            raise SingularSystemError(
                f"structurally singular: {empty_rows.size} empty rows, {empty_cols.size} empty columns"
            )
        self.A = A
        self._AH = None
        self.pivoting = pivoting
        self._lu = None
        if not pivoting:
            try:
                self._lu = self._factor(False)
            except RuntimeError:
                self.pivoting = True
        if self._lu is None:
            try:
                self._lu = self._factor(True)
            except RuntimeError as exc:
                raise SingularSystemError(f"factorization failed: {exc}") from exc

    def _factor(self, pivoting):
        with _thread_cap():
            if pivoting:
                return spla.splu(self.A.tocsc(), permc_spec="COLAMD")
            return spla.splu(self.A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options=dict(SymmetricMode=True))

    def _refined(self, b, trans, op, tol, max_iter):
        x = self._lu.solve(b, trans=trans)
        res = relative_residual(op, x, b) if np.all(np.isfinite(x)) else np.inf
        it = 1
        while res > tol and it < max_iter and np.isfinite(res):
            x_new = x + self._lu.solve(b - op @ x, trans=trans)
            res_new = relative_residual(op, x_new, b)
            it += 1
            if not res_new < res:
                break
            x, res = x_new, res_new
        return x, res, it

    def solve(self, b, tol: float = 1e-10, max_iter: int = 3, adjoint: bool = False):
        b = np.asarray(b, dtype=complex)
        trans = "H" if adjoint else "N"
        if adjoint:
            if self._AH is None:
                self._AH = self.A.conj().T.tocsr()
            op = self._AH
        else:
            op = self.A
        x, res, it = self._refined(b, trans, op, tol, max_iter)
        if res > tol and not self.pivoting:
            logger.debug("residual %.2e without pivoting; refactoring with partial pivoting", res)
            self.pivoting = True
            try:
                self._lu = self._factor(True)
            except RuntimeError as exc:
                raise SingularSystemError(f"factorization failed: {exc}") from exc
            x, res, it2 = self._refined(b, trans, op, tol, max_iter)
            it += it2
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("solution contains non-finite values")
        return x, SolveReport(it, float(res), bool(res <= tol), "direct")


def solve(A, b, tol: float = 1e-10, max_iter: int = 3, method: str = "direct"):
    """Solve ``A x = b``; returns ``(x, SolveReport)``.

    ``max_iter`` bounds refinement sweeps for the direct method and Krylov
    iterations for ``method="gmres"``.  Non-convergence is reported, not raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = _as_csr(A)
    b = np.asarray(b, dtype=complex)
    if np.linalg.norm(b) == 0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, method)
    if method == "direct":
        return Factorization(A).solve(b, tol=tol, max_iter=max(1, max_iter))
    if method == "gmres":
        return _solve_gmres(A, b, tol, max_iter)
    raise ValueError(f"unknown solver method {method!r}")


def _solve_gmres(A, b, tol, max_iter):
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
    except RuntimeError as exc:
        raise SingularSystemError(f"incomplete factorization failed: {exc}") from exc
    M = spla.LinearOperator(A.shape, ilu.solve, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(A, b, M=M, rtol=tol, atol=0.0, maxiter=max_iter, restart=100, callback=cb,
                         callback_type="pr_norm")
    res = relative_residual(A, x, b)
    return x, SolveReport(count[0], res, bool(res <= tol), "gmres")


def dump_matrix_market(A, path) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(_as_csr(A)))
