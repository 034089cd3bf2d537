"""Compressed sparse row matrices and the operations the solver needs.

The in-memory format is the classic CSR triple ``(indptr, indices, values)``
with ``int64`` index arrays and ``float64`` values.  Canonical form means:
``indptr`` is nondecreasing with ``indptr[0] == 0`` and
``indptr[-1] == nnz``, and column indices are strictly increasing within
each row (sorted, no duplicates).  Explicit zeros are legal entries and are
retained by every operation; :func:`prune` is the only way to drop them.

Heavy per-row loops live in the kernel backend (compiled extension when
available, numpy/scipy twins otherwise); this module owns validation and
the user-facing API.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from amgtheta._backend import kernels

__all__ = [
    "DenseVector",
    "SmootherError",
    "SparseMatrix",
    "csr_from_triplets",
    "diagonal",
    "from_dense",
    "identity",
    "matmat",
    "prune",
    "spmv",
    "to_dense",
    "transpose",
    "tri_sweep",
    "triple_product",
    "validate",
]

# Dense vectors are plain 1-D float64 numpy arrays; the alias documents intent.
DenseVector = np.ndarray


class SmootherError(ValueError):
    """A triangular sweep hit a row with a missing or zero diagonal."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """A CSR matrix: ``shape`` plus the ``(indptr, indices, values)`` triple.

    Instances are immutable containers; use the module factories
    (:func:`csr_from_triplets`, :func:`from_dense`, :func:`identity`) to
    build canonical matrices, and :func:`validate` to check one.

    Attributes
    ----------
    shape : tuple of int
        ``(nrows, ncols)``.
    indptr : ndarray of int64, shape ``(nrows + 1,)``
        Row start offsets into ``indices``/``values``.
    indices : ndarray of int64, shape ``(nnz,)``
        Column index of each stored entry.
    values : ndarray of float64, shape ``(nnz,)``
        Stored entry values; explicit zeros are permitted.
    """

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        nrows, ncols = self.shape
        if nrows < 0 or ncols < 0:
            raise ValueError(f"shape must be nonnegative, got {self.shape}")
        if self.indptr.dtype != np.int64 or self.indices.dtype != np.int64:
            raise ValueError("index arrays must be int64")
        if self.values.dtype != np.float64:
            raise ValueError("values must be float64")
        if self.indptr.shape != (nrows + 1,):
            raise ValueError(
                f"indptr has length {self.indptr.shape[0]}, expected {nrows + 1}"
            )
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values lengths differ")

    @property
    def nnz(self) -> int:
        """Number of stored entries, explicit zeros included."""
        return int(self.indptr[-1])

    @property
    def nrows(self) -> int:
        return self.shape[0]

    @property
    def ncols(self) -> int:
        return self.shape[1]


def validate(a: SparseMatrix) -> None:
    """Check canonical-form invariants, raising ``ValueError`` on the first hit.

    Verifies the ``indptr`` monotonicity and endpoints, column bounds, and
    strictly increasing columns within each row.
    """
    if a.indptr[0] != 0:
        raise ValueError("indptr must start at 0")
    if a.indptr[-1] != a.indices.shape[0]:
        raise ValueError("indptr must end at nnz")
    if np.any(np.diff(a.indptr) < 0):
        raise ValueError("indptr must be nondecreasing")
    if a.indices.shape[0] and (
        a.indices.min() < 0 or a.indices.max() >= a.ncols
    ):
        raise ValueError("column index out of range")
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), np.diff(a.indptr))
    # Within a row the column sequence must strictly increase.
    same_row = rows[1:] == rows[:-1]
    if np.any(same_row & (np.diff(a.indices) <= 0)):
        raise ValueError("columns must be strictly increasing within each row")


def csr_from_triplets(
    nrows: int,
    ncols: int,
    rows: np.ndarray,
    cols: np.ndarray,
    vals: np.ndarray,
) -> SparseMatrix:
    """Build a canonical CSR matrix from coordinate triplets.

    Duplicate ``(row, col)`` pairs are summed.  A duplicate group that sums
    to zero is kept as an explicit zero entry, so the sparsity pattern is
    the set of distinct input coordinates.

    Parameters
    ----------
    nrows, ncols : int
        Matrix shape.
    rows, cols : array_like of int
        Coordinates, one per entry.
    vals : array_like of float
        Entry values, same length as the coordinate arrays.

    Returns
    -------
    SparseMatrix

    Raises
    ------
    ValueError
        On mismatched array lengths or out-of-range coordinates.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=np.float64).ravel()
    if not (rows.shape == cols.shape == vals.shape):
        raise ValueError("rows, cols, vals must have equal lengths")
    if rows.shape[0]:
        if rows.min() < 0 or rows.max() >= nrows:
            raise ValueError("row index out of range")
        if cols.min() < 0 or cols.max() >= ncols:
            raise ValueError("column index out of range")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.shape[0]:
        first = np.empty(rows.shape[0], dtype=bool)
        first[0] = True
        first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        group = np.cumsum(first) - 1
        summed = np.bincount(group, weights=vals)
        out_rows = rows[first]
        out_cols = cols[first]
    else:
        summed = vals
        out_rows = rows
        out_cols = cols
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(np.bincount(out_rows, minlength=nrows), out=indptr[1:])
    return SparseMatrix((nrows, ncols), indptr, out_cols, summed)


def identity(n: int) -> SparseMatrix:
    """The n-by-n identity in canonical CSR form."""
    idx = np.arange(n, dtype=np.int64)
    return SparseMatrix(
        (n, n),
        np.arange(n + 1, dtype=np.int64),
        idx,
        np.ones(n, dtype=np.float64),
    )


def from_dense(dense: np.ndarray) -> SparseMatrix:
    """CSR matrix holding the nonzero entries of a dense array."""
    dense = np.asarray(dense, dtype=np.float64)
    rows, cols = np.nonzero(dense)
    return csr_from_triplets(
        dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols]
    )


def to_dense(a: SparseMatrix) -> np.ndarray:
    """Dense ``float64`` array with the same entries."""
    out = np.zeros(a.shape, dtype=np.float64)
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), np.diff(a.indptr))
    out[rows, a.indices] = a.values
    return out


def spmv(a: SparseMatrix, x: DenseVector) -> DenseVector:
    """Matrix-vector product ``A @ x``.

    Raises ``ValueError`` when ``x`` is not a 1-D vector of length
    ``a.ncols``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != a.ncols:
        raise ValueError(
            f"vector has shape {x.shape}, expected ({a.ncols},)"
        )
    return kernels.csr_matvec(a.indptr, a.indices, a.values, x)


def transpose(a: SparseMatrix) -> SparseMatrix:
    """Transpose in canonical form (rows come out sorted)."""
    tp, tj, tv = kernels.csr_transpose(a.ncols, a.indptr, a.indices, a.values)
    return SparseMatrix((a.ncols, a.nrows), tp, tj, tv)


def matmat(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Sparse product ``A @ B`` in canonical form.

    Entries that cancel to zero during accumulation are retained as
    explicit zeros, matching the triplet constructor's behavior.
    """
    if a.ncols != b.nrows:
        raise ValueError(
            f"inner dimensions differ: {a.shape} @ {b.shape}"
        )
    cp, cj, cv = kernels.csr_matmat(
        a.indptr, a.indices, a.values, b.indptr, b.indices, b.values, b.ncols
    )
    return SparseMatrix((a.nrows, b.ncols), cp, cj, cv)


def triple_product(
    r: SparseMatrix, a: SparseMatrix, p: SparseMatrix
) -> SparseMatrix:
    """Galerkin triple product ``R @ A @ P`` in canonical form."""
    if r.ncols != a.nrows or a.ncols != p.nrows:
        raise ValueError(
            f"dimension chain mismatch: {r.shape} @ {a.shape} @ {p.shape}"
        )
    return matmat(matmat(r, a), p)


def diagonal(a: SparseMatrix) -> tuple[DenseVector, np.ndarray]:
    """Stored diagonal of a square matrix.

    Returns
    -------
    diag : ndarray of float64
        Stored value at ``(i, i)`` per row, 0.0 where absent.
    present : ndarray of bool
        Whether row ``i`` stores a diagonal entry at all (an explicit zero
        counts as present).
    """
    if a.nrows != a.ncols:
        raise ValueError("diagonal requires a square matrix")
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), np.diff(a.indptr))
    hit = a.indices == rows
    diag = np.zeros(a.nrows, dtype=np.float64)
    diag[rows[hit]] = a.values[hit]
    present = np.zeros(a.nrows, dtype=bool)
    present[rows[hit]] = True
    return diag, present


def tri_sweep(
    a: SparseMatrix,
    x0: DenseVector,
    b: DenseVector,
    sweeps: int,
    lower: bool = True,
) -> DenseVector:
    """Gauss-Seidel sweeps ``x <- x + M^{-1} (b - A x)``.

    ``M`` is the lower (forward sweep) or upper (backward sweep) triangular
    part of ``A``, diagonal included.  The input ``x0`` is not modified.

    Parameters
    ----------
    a : SparseMatrix
        Square system matrix.
    x0, b : ndarray of float64
        Initial guess and right-hand side.
    sweeps : int
        Number of sweeps, at least 0.
    lower : bool
        Forward sweep when true, backward when false.

    Raises
    ------
    SmootherError
        When some row has no stored diagonal or a zero diagonal; the
        message names the first such row.
    """
    if a.nrows != a.ncols:
        raise ValueError("tri_sweep requires a square matrix")
    x0 = np.asarray(x0, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x0.shape != (a.nrows,) or b.shape != (a.nrows,):
        raise ValueError("x0 and b must have length equal to the matrix order")
    if sweeps < 0:
        raise ValueError("sweeps must be nonnegative")
    diag, present = diagonal(a)
    bad = ~present | (diag == 0.0)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise SmootherError(f"missing or zero diagonal at row {row}")
    x = x0.copy()
    kernels.gs_sweeps(a.indptr, a.indices, a.values, x, b, int(sweeps), bool(lower))
    return x


def prune(a: SparseMatrix) -> SparseMatrix:
    """Copy of ``a`` with explicit zero entries removed."""
    keep = a.values != 0.0
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), np.diff(a.indptr))
    indptr = np.zeros(a.nrows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows[keep], minlength=a.nrows), out=indptr[1:])
    return SparseMatrix(a.shape, indptr, a.indices[keep], a.values[keep])
