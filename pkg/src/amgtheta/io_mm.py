"""Matrix Market IO for CSR matrices and dense vectors.

Matrices use the ``coordinate real`` format, 1-based indices and one entry
per line.  The writer always emits ``general`` storage; the reader accepts
``general`` and ``symmetric`` (mirroring each strictly-lower or
strictly-upper entry).  Explicit zeros are real entries here: the writer
emits them and the reader keeps them, so sparsity patterns survive a
round trip.  Dense vectors use the ``array real general`` format as a
single-column matrix.

The round-trip guarantee relies on ``%.17g`` formatting, which reproduces
every float64 exactly.
"""

from __future__ import annotations

import numpy as np

from amgtheta.sparse import DenseVector, SparseMatrix, csr_from_triplets

__all__ = ["read_matrix", "read_vector", "write_matrix", "write_vector"]

_MATRIX_HEADER = "%%MatrixMarket matrix coordinate real general"
_VECTOR_HEADER = "%%MatrixMarket matrix array real general"


def _data_lines(path):
    """Yield non-comment, non-blank lines after the banner, banner first."""
    with open(path, "r", encoding="ascii") as handle:
        banner = handle.readline()
        if not banner.startswith("%%MatrixMarket"):
            raise ValueError(f"{path}: missing MatrixMarket banner")
        body = [
            line.strip()
            for line in handle
            if line.strip() and not line.lstrip().startswith("%")
        ]
    return banner.strip(), body


def write_matrix(path, a: SparseMatrix) -> None:
    """Write a CSR matrix in coordinate format, explicit zeros included."""
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), np.diff(a.indptr))
    with open(path, "w", encoding="ascii") as handle:
        handle.write(_MATRIX_HEADER + "\n")
        handle.write(f"{a.nrows} {a.ncols} {a.nnz}\n")
        for r, c, v in zip(rows, a.indices, a.values):
            handle.write(f"{r + 1} {c + 1} {v:.17g}\n")


def read_matrix(path) -> SparseMatrix:
    """Read a coordinate-format matrix into canonical CSR form.

    Supports ``general`` and ``symmetric`` storage; symmetric files have
    their strictly off-diagonal entries mirrored.

    Raises
    ------
    ValueError
        On an unsupported banner, malformed size line, wrong entry count,
        or out-of-range 1-based indices.
    """
    banner, body = _data_lines(path)
    fields = banner.lower().split()
    if len(fields) != 5 or fields[1:4] != ["matrix", "coordinate", "real"]:
        raise ValueError(f"{path}: unsupported banner {banner!r}")
    symmetry = fields[4]
    if symmetry not in ("general", "symmetric"):
        raise ValueError(f"{path}: unsupported symmetry {symmetry!r}")
    if not body:
        raise ValueError(f"{path}: missing size line")
    size = body[0].split()
    if len(size) != 3:
        raise ValueError(f"{path}: malformed size line {body[0]!r}")
    nrows, ncols, nnz = (int(part) for part in size)
    entries = body[1:]
    if len(entries) != nnz:
        raise ValueError(
            f"{path}: expected {nnz} entries, found {len(entries)}"
        )
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    for k, line in enumerate(entries):
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}: malformed entry line {line!r}")
        rows[k] = int(parts[0]) - 1
        cols[k] = int(parts[1]) - 1
        vals[k] = float(parts[2])
    if nnz and (
        rows.min() < 0 or rows.max() >= nrows
        or cols.min() < 0 or cols.max() >= ncols
    ):
        raise ValueError(f"{path}: entry index out of range")
    if symmetry == "symmetric":
        off = rows != cols
        mirrored_rows = np.concatenate([rows, cols[off]])
        mirrored_cols = np.concatenate([cols, rows[off]])
        vals = np.concatenate([vals, vals[off]])
        rows, cols = mirrored_rows, mirrored_cols
    return csr_from_triplets(nrows, ncols, rows, cols, vals)


def write_vector(path, x: DenseVector) -> None:
    """Write a dense vector as a single-column array-format matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {x.shape}")
    with open(path, "w", encoding="ascii") as handle:
        handle.write(_VECTOR_HEADER + "\n")
        handle.write(f"{x.shape[0]} 1\n")
        for v in x:
            handle.write(f"{v:.17g}\n")


def read_vector(path) -> DenseVector:
    """Read a single-column array-format matrix as a dense vector."""
    banner, body = _data_lines(path)
    fields = banner.lower().split()
    if len(fields) != 5 or fields[1:] != ["matrix", "array", "real", "general"]:
        raise ValueError(f"{path}: unsupported banner {banner!r}")
    if not body:
        raise ValueError(f"{path}: missing size line")
    size = body[0].split()
    if len(size) != 2:
        raise ValueError(f"{path}: malformed size line {body[0]!r}")
    nrows, ncols = int(size[0]), int(size[1])
    if ncols != 1:
        raise ValueError(f"{path}: expected a single column, got {ncols}")
    entries = body[1:]
    if len(entries) != nrows:
        raise ValueError(
            f"{path}: expected {nrows} values, found {len(entries)}"
        )
    return np.array([float(line) for line in entries], dtype=np.float64)
