"""Pure numpy/scipy twins of the compiled kernels in ``_kernels.pyx``.

Used when the extension is unavailable or when ``AMGTHETA_BACKEND=python``
forces them.  Signatures and semantics match the compiled versions exactly;
the test suite runs both backends against each other.
"""

from __future__ import annotations

import heapq

import numpy as np
import scipy.sparse as _sp
from scipy.sparse.linalg import spsolve_triangular as _spsolve_triangular


def _segment_reduce(ufunc, data, indptr, empty, dtype):
    """Per-row ``ufunc`` reduction of ``data`` segmented by ``indptr``.

    Rows of zero length receive ``empty``.  Relies on CSR rows being
    contiguous, so consecutive nonempty starts bound each segment exactly.
    """
    n = indptr.shape[0] - 1
    out = np.full(n, empty, dtype=dtype)
    if data.shape[0] == 0:
        return out
    nonempty = np.diff(indptr) > 0
    starts = indptr[:-1][nonempty]
    out[nonempty] = ufunc.reduceat(data, starts)
    return out


def csr_matvec(indptr, indices, values, x):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    return np.bincount(rows, weights=values * x[indices], minlength=n)


def gs_sweeps(indptr, indices, values, x, b, sweeps, lower):
    n = indptr.shape[0] - 1
    a = _sp.csr_matrix((values, indices, indptr), shape=(n, n))
    m = _sp.tril(a, format="csr") if lower else _sp.triu(a, format="csr")
    for _ in range(sweeps):
        x += _spsolve_triangular(m, b - a @ x, lower=lower, unit_diagonal=False)


def csr_transpose(ncols, indptr, indices, values):
    nrows = indptr.shape[0] - 1
    rows = np.repeat(np.arange(nrows, dtype=np.int64), np.diff(indptr))
    order = np.lexsort((rows, indices))
    tp = np.zeros(ncols + 1, dtype=np.int64)
    np.cumsum(np.bincount(indices, minlength=ncols), out=tp[1:])
    return tp, rows[order], values[order]


def csr_matmat(aip, aj, av, bip, bj, bv, bcols):
    arows = aip.shape[0] - 1
    brows = bip.shape[0] - 1
    a = _sp.csr_matrix((av, aj, aip), shape=(arows, brows))
    b = _sp.csr_matrix((bv, bj, bip), shape=(brows, bcols))
    c = a @ b
    c.sort_indices()
    return (c.indptr.astype(np.int64), c.indices.astype(np.int64),
            c.data.astype(np.float64))


def row_max_abs_offdiag(indptr, indices, values):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    keys = np.where(indices != rows, np.abs(values), -np.inf)
    out = _segment_reduce(np.maximum, keys, indptr, -np.inf, np.float64)
    return np.where(np.isfinite(out), out, 0.0)


def row_max_masked(indptr, indices, keys, active):
    vals = np.where(active[indices].astype(bool), keys[indices], -np.inf)
    return _segment_reduce(np.maximum, vals, indptr, -np.inf, np.float64)


def rs_first_pass(sp, si, tp, ti, label, measure):
    """Greedy max-measure C/F pass over a strength graph, in place.

    ``label`` enters with -1 for unassigned and 0 for pre-assigned F
    points.  The unassigned point with the largest ``measure`` (ties by
    lowest index) becomes C; its unassigned transpose-neighbors become F,
    each bumping the measures of its own still-unassigned strong
    dependencies.  Stale heap entries are skipped by key comparison.
    """
    n = label.shape[0]
    heap = [(-int(measure[i]), i) for i in range(n) if label[i] == -1]
    heapq.heapify(heap)
    while heap:
        neg_m, i = heapq.heappop(heap)
        if label[i] != -1 or -neg_m != measure[i]:
            continue
        label[i] = 1
        for j in ti[tp[i]:tp[i + 1]]:
            if label[j] != -1:
                continue
            label[j] = 0
            for k in si[sp[j]:sp[j + 1]]:
                if label[k] == -1:
                    measure[k] += 1
                    heapq.heappush(heap, (-int(measure[k]), int(k)))


def row_any_masked(indptr, indices, flags):
    hit = flags[indices].astype(bool)
    return _segment_reduce(
        np.logical_or, hit, indptr, False, bool
    ).astype(np.uint8)
