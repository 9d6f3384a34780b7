"""Sparse and dense linear algebra carriers.

Vectors are float64 numpy arrays, sparse operators are CSR matrices with
sorted, duplicate-free column indices, and small dense symmetric blocks are
factorized with a pivoted LDL^T (Bunch-Kaufman) decomposition.
"""
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .common import DimensionError, IndexRangeError, SingularBlockError

# Relative pivot threshold below which a block counts as singular
PIVOT_TOLERANCE = 1e-14


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    if A.shape[1] != x.shape[0]:
        raise DimensionError(A.shape[1], x.shape[0], what="spmv")
    return A @ x


def spmv_transpose(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """y = A^T x without forming the transpose."""
    if A.shape[0] != x.shape[0]:
        raise DimensionError(A.shape[0], x.shape[0], what="spmv_transpose")
    return A.T @ x


def assemble_csr(rows, cols, values, nrows: int, ncols: int) -> sp.csr_matrix:
    """Build a CSR matrix from triplets, summing duplicates.

    Triplets are sorted by (row, col, value) before merging so the summation
    order, and hence the result, does not depend on the input order.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    if not (rows.size == cols.size == values.size):
        raise DimensionError(rows.size, values.size, what="triplet arrays")

    if rows.size == 0:
        return sp.csr_matrix(
            (np.zeros(0), np.zeros(0, dtype=np.int32), np.zeros(nrows + 1, dtype=np.int32)),
            shape=(nrows, ncols),
        )

    if rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols:
        raise IndexRangeError(detail=f"triplet index outside {nrows}x{ncols}")

    order = np.lexsort((values, cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]

    keys = rows * ncols + cols
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    data = np.add.reduceat(values, starts)
    urows = rows[starts]
    indices = cols[starts]

    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(np.bincount(urows, minlength=nrows), out=indptr[1:])
    return sp.csr_matrix((data, indices, indptr), shape=(nrows, ncols))


def same_structure(A: sp.csr_matrix, B: sp.csr_matrix) -> bool:
    return (
        A.shape == B.shape
        and np.array_equal(A.indptr, B.indptr)
        and np.array_equal(A.indices, B.indices)
    )


def is_symmetric(A: sp.csr_matrix, rtol: float = 1e-12) -> bool:
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    return abs(A - A.T).max() <= rtol * scale


@dataclass(frozen=True)
class DenseFactorization:
    """Pivoted LDL^T factors of a symmetric block."""

    lower: np.ndarray  # lower[perm] is unit lower triangular
    d: np.ndarray
    perm: np.ndarray
    block_id: Any = None

    @property
    def size(self) -> int:
        return self.d.shape[0]


def _check_pivots(d: np.ndarray, scale: float, block_id: Any):
    n = d.shape[0]
    threshold = PIVOT_TOLERANCE * scale
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            # 2x2 pivot block
            det = d[i, i] * d[i + 1, i + 1] - d[i + 1, i] * d[i, i + 1]
            if abs(det) <= threshold * threshold:
                raise SingularBlockError(block_id, det)
            i += 2
        else:
            if abs(d[i, i]) <= threshold:
                raise SingularBlockError(block_id, d[i, i])
            i += 1


def dense_factorize(A: np.ndarray, block_id: Any = None) -> DenseFactorization:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(A.shape[0], A.shape[-1], what=f"dense block {block_id}")
    scale = np.abs(A).max() if A.size else 0.0
    if scale == 0.0:
        raise SingularBlockError(block_id, 0.0)
    lower, d, perm = scipy.linalg.ldl(A, lower=True, hermitian=True)
    _check_pivots(d, scale, block_id)
    return DenseFactorization(lower=lower, d=d, perm=perm, block_id=block_id)


def dense_solve(F: DenseFactorization, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for one or several right-hand sides (columns of b)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != F.size:
        raise DimensionError(F.size, b.shape[0], what=f"dense solve {F.block_id}")
    n = F.size
    tri = F.lower[F.perm]
    y = scipy.linalg.solve_triangular(tri, b[F.perm], lower=True, unit_diagonal=True)

    # D is block diagonal with 1x1 and 2x2 blocks: solve it as a tridiagonal band
    bands = np.zeros((3, n))
    bands[0, 1:] = np.diag(F.d, 1)
    bands[1] = np.diag(F.d)
    bands[2, :-1] = np.diag(F.d, -1)
    w = scipy.linalg.solve_banded((1, 1), bands, y)

    z = scipy.linalg.solve_triangular(tri, w, lower=True, trans="T", unit_diagonal=True)
    x = np.empty_like(z)
    x[F.perm] = z
    return x


def dense_inverse(F: DenseFactorization, symmetrize: bool = True) -> np.ndarray:
    inv = dense_solve(F, np.eye(F.size))
    if symmetrize:
        inv = 0.5 * (inv + inv.T)
    return inv
