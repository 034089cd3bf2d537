# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels.

Every function here has a pure numpy/scipy twin in ``_kernels_py`` with the
same signature and semantics; ``_backend`` picks one implementation at import
time.  Callers are responsible for validating structure (sorted rows, no
duplicate columns, nonzero diagonals for the triangular sweeps); the kernels
assume well-formed input and favor speed.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t
ctypedef cnp.float64_t real_t


def csr_matvec(idx_t[::1] indptr, idx_t[::1] indices, real_t[::1] values,
               real_t[::1] x):
    """Return ``A @ x`` for a CSR matrix given by its three arrays."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[real_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef real_t[::1] y = out
    cdef Py_ssize_t i, k
    cdef real_t acc
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += values[k] * x[indices[k]]
        y[i] = acc
    return out


def gs_sweeps(idx_t[::1] indptr, idx_t[::1] indices, real_t[::1] values,
              real_t[::1] x, real_t[::1] b, Py_ssize_t sweeps, bint lower):
    """Run ``sweeps`` in-place Gauss-Seidel sweeps on ``x``.

    ``lower`` selects the forward sweep (lower-triangular part as the
    preconditioner, ascending row order); otherwise the backward sweep
    (upper-triangular part, descending row order).  Each sweep realizes
    ``x <- x + M^{-1} (b - A x)`` in fused form.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t s, i, k
    cdef idx_t j
    cdef real_t acc, diag
    for s in range(sweeps):
        if lower:
            for i in range(n):
                acc = b[i]
                diag = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    j = indices[k]
                    if j == i:
                        diag = values[k]
                    else:
                        acc -= values[k] * x[j]
                x[i] = acc / diag
        else:
            for i in range(n - 1, -1, -1):
                acc = b[i]
                diag = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    j = indices[k]
                    if j == i:
                        diag = values[k]
                    else:
                        acc -= values[k] * x[j]
                x[i] = acc / diag


def csr_transpose(Py_ssize_t ncols, idx_t[::1] indptr, idx_t[::1] indices,
                  real_t[::1] values):
    """Return ``(indptr, indices, values)`` of the transpose, rows sorted."""
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t nnz = indices.shape[0]
    cdef cnp.ndarray[idx_t, ndim=1] tp = np.zeros(ncols + 1, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] tj = np.empty(nnz, dtype=np.int64)
    cdef cnp.ndarray[real_t, ndim=1] tv = np.empty(nnz, dtype=np.float64)
    cdef idx_t[::1] tpv = tp
    cdef idx_t[::1] tjv = tj
    cdef real_t[::1] tvv = tv
    cdef cnp.ndarray[idx_t, ndim=1] fill = np.empty(ncols, dtype=np.int64)
    cdef idx_t[::1] fillv = fill
    cdef Py_ssize_t i, k
    cdef idx_t j, pos
    for k in range(nnz):
        tpv[indices[k] + 1] += 1
    for i in range(ncols):
        tpv[i + 1] += tpv[i]
        fillv[i] = tpv[i]
    # Scatter in row order: output rows come out sorted by column of A,
    # i.e. already in canonical form.
    for i in range(nrows):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            pos = fillv[j]
            tjv[pos] = i
            tvv[pos] = values[k]
            fillv[j] = pos + 1
    return tp, tj, tv


def csr_matmat(idx_t[::1] aip, idx_t[::1] aj, real_t[::1] av,
               idx_t[::1] bip, idx_t[::1] bj, real_t[::1] bv,
               Py_ssize_t bcols):
    """Return CSR arrays of ``A @ B`` (Gustavson row-merge, sorted rows).

    Entries produced by cancellation are kept; nothing is pruned.
    """
    cdef Py_ssize_t nrows = aip.shape[0] - 1
    cdef cnp.ndarray[idx_t, ndim=1] mask = np.full(bcols, -1, dtype=np.int64)
    cdef idx_t[::1] maskv = mask
    cdef cnp.ndarray[idx_t, ndim=1] cp = np.zeros(nrows + 1, dtype=np.int64)
    cdef idx_t[::1] cpv = cp
    cdef Py_ssize_t i, k, l, m
    cdef idx_t j, col, row_nnz, nnz, p
    cdef real_t v

    # Pass 1: count the merged pattern per row.
    nnz = 0
    for i in range(nrows):
        row_nnz = 0
        for k in range(aip[i], aip[i + 1]):
            j = aj[k]
            for l in range(bip[j], bip[j + 1]):
                col = bj[l]
                if maskv[col] != i:
                    maskv[col] = i
                    row_nnz += 1
        nnz += row_nnz
        cpv[i + 1] = nnz

    cdef cnp.ndarray[idx_t, ndim=1] cj = np.empty(nnz, dtype=np.int64)
    cdef cnp.ndarray[real_t, ndim=1] cv = np.empty(nnz, dtype=np.float64)
    cdef idx_t[::1] cjv = cj
    cdef real_t[::1] cvv = cv
    cdef cnp.ndarray[real_t, ndim=1] sums = np.zeros(bcols, dtype=np.float64)
    cdef real_t[::1] sumsv = sums
    cdef cnp.ndarray[idx_t, ndim=1] tmpcols = np.empty(bcols, dtype=np.int64)
    cdef idx_t[::1] tmpv = tmpcols
    cdef idx_t key

    # Pass 2: accumulate values, then emit each row sorted by column.
    mask[:] = -1
    for i in range(nrows):
        row_nnz = 0
        for k in range(aip[i], aip[i + 1]):
            j = aj[k]
            v = av[k]
            for l in range(bip[j], bip[j + 1]):
                col = bj[l]
                if maskv[col] != i:
                    maskv[col] = i
                    sumsv[col] = v * bv[l]
                    tmpv[row_nnz] = col
                    row_nnz += 1
                else:
                    sumsv[col] += v * bv[l]
        # Insertion sort: RAP rows stay short, quadratic cost is fine here.
        for m in range(1, row_nnz):
            key = tmpv[m]
            l = m - 1
            while l >= 0 and tmpv[l] > key:
                tmpv[l + 1] = tmpv[l]
                l -= 1
            tmpv[l + 1] = key
        p = cpv[i]
        for m in range(row_nnz):
            col = tmpv[m]
            cjv[p + m] = col
            cvv[p + m] = sumsv[col]
    return cp, cj, cv


def row_max_abs_offdiag(idx_t[::1] indptr, idx_t[::1] indices,
                        real_t[::1] values):
    """Per-row max of ``|a_ij|`` over ``j != i`` (0.0 for rows without one)."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[real_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef real_t[::1] y = out
    cdef Py_ssize_t i, k
    cdef real_t best, v
    for i in range(n):
        best = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] != i:
                v = values[k]
                if v < 0.0:
                    v = -v
                if v > best:
                    best = v
        y[i] = best
    return out


def row_max_masked(idx_t[::1] indptr, idx_t[::1] indices, real_t[::1] keys,
                   cnp.uint8_t[::1] active):
    """Per-row max of ``keys[j]`` over columns ``j`` with ``active[j]``.

    Rows with no active neighbor yield ``-inf``.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[real_t, ndim=1] out = np.full(n, -np.inf, dtype=np.float64)
    cdef real_t[::1] y = out
    cdef Py_ssize_t i, k
    cdef idx_t j
    cdef real_t best
    for i in range(n):
        best = y[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if active[j] and keys[j] > best:
                best = keys[j]
        y[i] = best
    return out


def row_any_masked(idx_t[::1] indptr, idx_t[::1] indices,
                   cnp.uint8_t[::1] flags):
    """Per-row indicator: does the row contain a column ``j`` with ``flags[j]``."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] y = out
    cdef Py_ssize_t i, k
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if flags[indices[k]]:
                y[i] = 1
                break
    return out


cdef inline bint _heap_before(idx_t m1, idx_t i1, idx_t m2, idx_t i2) nogil:
    # Max-heap order: larger measure wins, ties go to the lower index.
    return m1 > m2 or (m1 == m2 and i1 < i2)


def rs_first_pass(idx_t[::1] sp, idx_t[::1] si, idx_t[::1] tp, idx_t[::1] ti,
                  cnp.int8_t[::1] label, idx_t[::1] measure):
    """Greedy max-measure C/F pass over a strength graph, in place.

    ``label`` enters with -1 for unassigned and 0 for pre-assigned F
    points.  The unassigned point with the largest ``measure`` (ties by
    lowest index) becomes C; its unassigned transpose-neighbors become F,
    each bumping the measures of its own still-unassigned strong
    dependencies.  Stale heap entries are skipped by key comparison.
    """
    cdef Py_ssize_t n = label.shape[0]
    # Each point is pushed once up front and once per measure bump; bumps
    # are bounded by nnz(S), so the heap never outgrows this buffer.
    cdef Py_ssize_t cap = n + si.shape[0] + 1
    cdef cnp.ndarray[idx_t, ndim=1] hm_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] hi_arr = np.empty(cap, dtype=np.int64)
    cdef idx_t[::1] hm = hm_arr
    cdef idx_t[::1] hi = hi_arr
    cdef Py_ssize_t size = 0
    cdef Py_ssize_t child, parent, smallest
    cdef idx_t i, j, k, p, q, cur_m, cur_i, tmp

    for i in range(n):
        if label[i] == -1:
            # push (measure[i], i)
            hm[size] = measure[i]
            hi[size] = i
            child = size
            size += 1
            while child > 0:
                parent = (child - 1) >> 1
                if _heap_before(hm[child], hi[child], hm[parent], hi[parent]):
                    tmp = hm[child]; hm[child] = hm[parent]; hm[parent] = tmp
                    tmp = hi[child]; hi[child] = hi[parent]; hi[parent] = tmp
                    child = parent
                else:
                    break

    while size > 0:
        # pop the root
        cur_m = hm[0]
        cur_i = hi[0]
        size -= 1
        hm[0] = hm[size]
        hi[0] = hi[size]
        parent = 0
        while True:
            child = 2 * parent + 1
            if child >= size:
                break
            if child + 1 < size and _heap_before(hm[child + 1], hi[child + 1],
                                                 hm[child], hi[child]):
                child += 1
            if _heap_before(hm[child], hi[child], hm[parent], hi[parent]):
                tmp = hm[child]; hm[child] = hm[parent]; hm[parent] = tmp
                tmp = hi[child]; hi[child] = hi[parent]; hi[parent] = tmp
                parent = child
            else:
                break
        if label[cur_i] != -1 or cur_m != measure[cur_i]:
            continue
        label[cur_i] = 1
        for p in range(tp[cur_i], tp[cur_i + 1]):
            j = ti[p]
            if label[j] != -1:
                continue
            label[j] = 0
            for q in range(sp[j], sp[j + 1]):
                k = si[q]
                if label[k] == -1:
                    measure[k] += 1
                    # push (measure[k], k)
                    hm[size] = measure[k]
                    hi[size] = k
                    child = size
                    size += 1
                    while child > 0:
                        parent = (child - 1) >> 1
                        if _heap_before(hm[child], hi[child],
                                        hm[parent], hi[parent]):
                            tmp = hm[child]; hm[child] = hm[parent]; hm[parent] = tmp
                            tmp = hi[child]; hi[child] = hi[parent]; hi[parent] = tmp
                            child = parent
                        else:
                            break
