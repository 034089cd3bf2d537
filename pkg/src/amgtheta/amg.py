"""Classical algebraic multigrid parameterized by the strong-threshold theta.

Setup follows the classical two-stage recipe.  Strength of connection uses
the absolute-value test ``|a_ij| >= theta * max_{k != i} |a_ik|``; splitting
is either the greedy Ruge-Stuben first pass or PMIS with deterministic
hash-based tie-breaking; interpolation is direct interpolation with the
standard positive/negative sign split; coarse operators are Galerkin
products ``R A P`` with ``R = P^T``.  The solve phase runs V-cycles with
forward (lower-triangular) pre-sweeps and backward (upper-triangular)
post-sweeps, stopping on the relative residual
``||b - A x^k||_2 / ||b||_2 < tol`` or at the iteration cap.

Everything is deterministic: PMIS randomness comes from a splitmix64 hash
of ``(seed, point index)``, so splits reproduce bit-for-bit across runs,
platforms, and kernel backends.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from amgtheta._backend import kernels
from amgtheta.sparse import (
    DenseVector,
    SmootherError,
    SparseMatrix,
    diagonal,
    matmat,
    transpose,
)

__all__ = [
    "AmgHierarchy",
    "AmgLevel",
    "Adjacency",
    "CfSplit",
    "DivergenceError",
    "SetupError",
    "SolveReport",
    "SolverOptions",
    "StrengthGraph",
    "build_interpolation",
    "cf_split_pmis",
    "cf_split_rs",
    "report_to_json",
    "setup_hierarchy",
    "solve",
    "strength_graph",
    "vcycle",
]

COARSE = True
FINE = False


class SetupError(RuntimeError):
    """Hierarchy construction failed (for example a singular coarsest level)."""


class DivergenceError(RuntimeError):
    """The iteration produced a non-finite residual.

    Distinct from ordinary non-convergence, which is a normal
    :class:`SolveReport` with ``converged=False``.
    """


@dataclass(frozen=True)
class Adjacency:
    """A per-row index-set family in CSR layout (pattern only)."""

    indptr: np.ndarray
    indices: np.ndarray

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


@dataclass(frozen=True)
class StrengthGraph:
    """Strong dependency sets ``S_i`` and strong influence sets ``S_i^T``.

    ``j in strong.row(i)`` means point ``i`` strongly depends on ``j``;
    by exact duality ``i in strong_transpose.row(j)``.

    ``entry_positions`` caches, for each strong edge in CSR order, the
    position of the matching entry in the source matrix's ``values``
    array; interpolation uses it to avoid a membership search.  Graphs
    built by hand (for tests) may leave it ``None``.
    """

    strong: Adjacency
    strong_transpose: Adjacency
    entry_positions: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.strong.indptr.shape[0] - 1


@dataclass(frozen=True)
class CfSplit:
    """Coarse/fine labels: ``is_coarse[i]`` is true for C points."""

    is_coarse: np.ndarray

    @property
    def n_coarse(self) -> int:
        return int(np.count_nonzero(self.is_coarse))


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the setup and solve phases.

    Attributes
    ----------
    theta : float
        Strong-connection threshold in ``(0, 1]``.
    pre_sweeps, post_sweeps : int
        Forward/backward Gauss-Seidel sweep counts per cycle (``k1``,
        ``k2``); both nonnegative, at least one positive.
    coarsening : str
        ``"rs"`` (experiment default) or ``"pmis"``.
    coarse_cutoff : int
        Stop coarsening once a level has at most this many unknowns.
    max_levels : int
        Hard cap on hierarchy depth.
    tol : float
        Relative-residual stopping tolerance.
    max_iter : int
        V-cycle cap; hitting it yields ``converged=False``, not an error.
    pmis_seed : int
        Seed of the PMIS tie-breaking hash.
    """

    theta: float = 0.25
    pre_sweeps: int = 1
    post_sweeps: int = 1
    coarsening: str = "rs"
    coarse_cutoff: int = 16
    max_levels: int = 25
    tol: float = 1e-8
    max_iter: int = 200
    pmis_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.pre_sweeps < 0 or self.post_sweeps < 0:
            raise ValueError("sweep counts must be nonnegative")
        if self.pre_sweeps + self.post_sweeps < 1:
            raise ValueError("at least one smoothing sweep per cycle is required")
        if self.coarsening not in ("rs", "pmis"):
            raise ValueError(f"coarsening must be 'rs' or 'pmis', got {self.coarsening!r}")
        if self.coarse_cutoff < 1 or self.max_levels < 1 or self.max_iter < 1:
            raise ValueError("coarse_cutoff, max_levels, max_iter must be positive")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class AmgLevel:
    """One grid level; transfer operators are absent on the coarsest."""

    a: SparseMatrix
    p: SparseMatrix | None = None
    r: SparseMatrix | None = None
    split: CfSplit | None = None


@dataclass(frozen=True)
class AmgHierarchy:
    """The full grid hierarchy plus the dense coarsest factorization."""

    levels: tuple[AmgLevel, ...]
    coarsest: tuple[np.ndarray, np.ndarray]
    opts: SolverOptions
    setup_seconds: float
    # Per level: how many F points had no strong C neighbor and received a
    # zero interpolation row (pure smoothing handles them).
    zero_interp_rows: tuple[int, ...] = field(default=())

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(level.a.nrows for level in self.levels)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a solve: counts, residual trace, wall-clock seconds."""

    iterations: int
    residual_history: tuple[float, ...]
    converged: bool
    setup_seconds: float
    solve_seconds: float


def report_to_json(report: SolveReport) -> dict:
    """JSON-ready dict with the report's exact field names."""
    return {
        "iterations": report.iterations,
        "residual_history": list(report.residual_history),
        "converged": report.converged,
        "setup_seconds": report.setup_seconds,
        "solve_seconds": report.solve_seconds,
    }


def strength_graph(a: SparseMatrix, theta: float) -> StrengthGraph:
    """Strong connections of ``A`` under threshold ``theta``.

    ``S_i = { j != i : |a_ij| >= theta * max_{k != i} |a_ik| }``; a row
    whose off-diagonal part is entirely zero (or absent) gets an empty
    set.  Explicit zeros therefore never count as strong.

    Raises
    ------
    ValueError
        When ``theta`` is outside ``(0, 1]`` or ``A`` is not square.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if a.nrows != a.ncols:
        raise ValueError("strength graph requires a square matrix")
    n = a.nrows
    rowmax = kernels.row_max_abs_offdiag(a.indptr, a.indices, a.values)
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(a.indptr))
    strong = (
        (a.indices != rows)
        & (rowmax[rows] > 0.0)
        & (np.abs(a.values) >= theta * rowmax[rows])
    )
    positions = np.nonzero(strong)[0]
    s_indices = a.indices[positions]
    s_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows[positions], minlength=n), out=s_indptr[1:])
    t_indptr, t_indices, _ = kernels.csr_transpose(
        n, s_indptr, s_indices, np.zeros(s_indices.shape[0], dtype=np.float64)
    )
    return StrengthGraph(
        Adjacency(s_indptr, s_indices),
        Adjacency(t_indptr, t_indices),
        entry_positions=positions,
    )


def _hash01(seed: int, count: int) -> np.ndarray:
    """splitmix64-based deterministic uniforms in the open interval (0, 1)."""
    gamma = np.uint64(0x9E3779B97F4A7C15)
    with np.errstate(over="ignore"):  # modular 64-bit arithmetic by design
        z = (
            np.uint64(seed % 2**64) * gamma
            + np.arange(count, dtype=np.uint64) * gamma
        )
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    # Keep 53 mantissa bits and center within the cell: never exactly 0 or 1.
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _isolated(s: StrengthGraph) -> np.ndarray:
    """Points with no strong connection in either direction."""
    return (s.strong.degrees == 0) & (s.strong_transpose.degrees == 0)


def cf_split_rs(s: StrengthGraph) -> CfSplit:
    """Greedy Ruge-Stuben first-pass splitting.

    Repeatedly promotes the unassigned point with the largest measure
    (initially ``|S_i^T|``, ties broken by lowest index) to C, demotes
    its unassigned strong influences to F, and rewards their strong
    dependencies with a measure bump.  Isolated points are labeled F up
    front.  Fully deterministic.
    """
    n = s.n
    label = np.full(n, -1, dtype=np.int8)  # -1 unassigned, 1 C, 0 F
    label[_isolated(s)] = 0
    measure = s.strong_transpose.degrees.astype(np.int64)
    kernels.rs_first_pass(
        s.strong.indptr,
        s.strong.indices,
        s.strong_transpose.indptr,
        s.strong_transpose.indices,
        label,
        measure,
    )
    return CfSplit(label == 1)


def cf_split_pmis(s: StrengthGraph, seed: int) -> CfSplit:
    """PMIS splitting with hash-based tie-breaking.

    Each point carries the weight ``|S_i^T| + hash01(seed, i)``.  Rounds
    select the points that beat every unassigned neighbor in the
    symmetrized strong graph as C, then demote unassigned neighbors of
    the new C points to F.  Isolated points are F up front.  A stall
    guard promotes the best remaining point if a round selects nothing
    (only reachable through hash collisions), so termination is
    unconditional.
    """
    n = s.n
    label = np.full(n, -1, dtype=np.int8)
    label[_isolated(s)] = 0
    weight = s.strong_transpose.degrees.astype(np.float64) + _hash01(seed, n)
    sp, si = s.strong.indptr, s.strong.indices
    tp, ti = s.strong_transpose.indptr, s.strong_transpose.indices
    unassigned = label == -1
    while np.any(unassigned):
        active = unassigned.astype(np.uint8)
        nbr_max = np.maximum(
            kernels.row_max_masked(sp, si, weight, active),
            kernels.row_max_masked(tp, ti, weight, active),
        )
        new_c = unassigned & (weight > nbr_max)
        if not np.any(new_c):
            best = int(np.argmax(np.where(unassigned, weight, -np.inf)))
            new_c = np.zeros(n, dtype=bool)
            new_c[best] = True
        label[new_c] = 1
        unassigned &= ~new_c
        flags = new_c.astype(np.uint8)
        touched = (
            kernels.row_any_masked(sp, si, flags).astype(bool)
            | kernels.row_any_masked(tp, ti, flags).astype(bool)
        )
        new_f = unassigned & touched
        label[new_f] = 0
        unassigned &= ~new_f
    return CfSplit(label == 1)


def _strong_entry_positions(a: SparseMatrix, s: StrengthGraph) -> np.ndarray:
    """Positions of the strong edges inside ``a.values`` (CSR edge order)."""
    if s.entry_positions is not None:
        return s.entry_positions
    n = a.nrows
    rows_a = np.repeat(np.arange(n, dtype=np.int64), np.diff(a.indptr))
    rows_s = np.repeat(np.arange(n, dtype=np.int64), np.diff(s.strong.indptr))
    # Row-major (row, col) keys increase strictly in canonical CSR order,
    # so a single global searchsorted recovers every position.
    keys_a = rows_a * n + a.indices
    keys_s = rows_s * n + s.strong.indices
    pos = np.searchsorted(keys_a, keys_s)
    if np.any(pos >= keys_a.shape[0]) or np.any(keys_a[pos] != keys_s):
        raise ValueError("strength graph contains edges absent from the matrix")
    return pos


def build_interpolation(
    a: SparseMatrix, s: StrengthGraph, split: CfSplit
) -> SparseMatrix:
    """Direct interpolation ``P`` (fine by coarse).

    C points interpolate by identity.  An F point ``i`` distributes over
    its strong C neighbors with the sign-split direct-interpolation
    weights ``w_ij = -alpha_i a_ij / a~_ii`` (negative entries) and
    ``w_ij = -beta_i a_ij / a~_ii`` (positive entries), where ``alpha``
    and ``beta`` are the ratios of the full off-diagonal row sums to the
    strong-C row sums of matching sign.  A sign class present in the row
    but absent among strong C neighbors is lumped onto the diagonal
    ``a~_ii`` instead.  On M-matrix rows this reduces to the single-ratio
    form ``w_ij = -(a_ij Sum_N a_ik / Sum_C a_im) / a_ii``.

    F points without strong C neighbors get all-zero rows; the caller
    counts them for diagnostics.

    Raises
    ------
    SetupError
        When an interpolated F row has a zero (effective) diagonal.
    """
    n = a.nrows
    is_c = split.is_coarse
    ncoarse = int(np.count_nonzero(is_c))
    cmap = np.cumsum(is_c, dtype=np.int64) - 1
    rows_a = np.repeat(np.arange(n, dtype=np.int64), np.diff(a.indptr))
    offdiag = a.indices != rows_a
    neg_a = offdiag & (a.values < 0.0)
    pos_a = offdiag & (a.values > 0.0)
    sum_all_neg = np.bincount(rows_a[neg_a], weights=a.values[neg_a], minlength=n)
    sum_all_pos = np.bincount(rows_a[pos_a], weights=a.values[pos_a], minlength=n)

    pos_in_a = _strong_entry_positions(a, s)
    rows_s = np.repeat(np.arange(n, dtype=np.int64), np.diff(s.strong.indptr))
    strong_c = is_c[s.strong.indices] & ~is_c[rows_s]
    sc_rows = rows_s[strong_c]
    sc_cols = s.strong.indices[strong_c]
    sc_vals = a.values[pos_in_a[strong_c]]
    sc_neg = sc_vals < 0.0
    sum_strong_neg = np.bincount(
        sc_rows[sc_neg], weights=sc_vals[sc_neg], minlength=n
    )
    sum_strong_pos = np.bincount(
        sc_rows[~sc_neg], weights=sc_vals[~sc_neg], minlength=n
    )

    diag, _ = diagonal(a)
    # Lump a sign class onto the diagonal wherever no strong C entry of
    # that sign exists to carry it.
    lump_pos = sum_strong_pos == 0.0
    lump_neg = sum_strong_neg == 0.0
    eff_diag = diag + lump_pos * sum_all_pos + lump_neg * sum_all_neg
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(lump_neg, 0.0, sum_all_neg / sum_strong_neg)
        beta = np.where(lump_pos, 0.0, sum_all_pos / sum_strong_pos)

    interpolated = np.unique(sc_rows)
    if np.any(eff_diag[interpolated] == 0.0):
        row = int(interpolated[eff_diag[interpolated] == 0.0][0])
        raise SetupError(f"zero diagonal at row {row} during interpolation")

    coeff = np.where(sc_neg, alpha[sc_rows], beta[sc_rows])
    weights = -coeff * sc_vals / eff_diag[sc_rows]

    c_points = np.nonzero(is_c)[0]
    p_rows = np.concatenate([c_points, sc_rows])
    p_cols = np.concatenate([cmap[c_points], cmap[sc_cols]])
    p_vals = np.concatenate([np.ones(c_points.shape[0]), weights])
    order = np.lexsort((p_cols, p_rows))
    p_rows, p_cols, p_vals = p_rows[order], p_cols[order], p_vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(p_rows, minlength=n), out=indptr[1:])
    return SparseMatrix((n, ncoarse), indptr, p_cols, p_vals)


def _count_zero_interp_rows(split: CfSplit, p: SparseMatrix) -> int:
    empty = np.diff(p.indptr) == 0
    return int(np.count_nonzero(empty & ~split.is_coarse))


def _factor_coarsest(a: SparseMatrix, level: int, limit: int):
    """Dense LU with partial pivoting; reject singular coarsest systems."""
    from amgtheta.sparse import to_dense

    if a.nrows > limit:
        raise SetupError(
            f"coarsening stalled at dimension {a.nrows} on level {level}; "
            f"refusing a dense factorization above {limit} unknowns"
        )
    dense = to_dense(a)
    with warnings.catch_warnings():
        # singularity is detected below and raised as SetupError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(dense, check_finite=False)
    udiag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or np.any(udiag == 0.0):
        raise SetupError(f"singular coarsest matrix at level {level}")
    return lu, piv


def setup_hierarchy(a: SparseMatrix, opts: SolverOptions) -> AmgHierarchy:
    """Build the AMG hierarchy for ``A`` under ``opts``.

    Levels are added until the next level would be no smaller (a
    coarsening stall, for example on a diagonal matrix), the dimension
    reaches ``opts.coarse_cutoff``, or ``opts.max_levels`` is hit.  The
    last level's matrix is factorized densely.

    Raises
    ------
    SetupError
        When the coarsest matrix is singular (message names the level)
        or interpolation meets a zero diagonal.
    """
    if a.nrows != a.ncols:
        raise ValueError("setup requires a square matrix")
    start = time.perf_counter()
    levels: list[AmgLevel] = []
    zero_rows: list[int] = []
    current = a
    while (
        current.nrows > opts.coarse_cutoff
        and len(levels) + 1 < opts.max_levels
    ):
        s = strength_graph(current, opts.theta)
        if opts.coarsening == "rs":
            split = cf_split_rs(s)
        else:
            split = cf_split_pmis(s, opts.pmis_seed)
        ncoarse = split.n_coarse
        if ncoarse == 0 or ncoarse == current.nrows:
            break  # stall: no usable coarsening at this theta
        p = build_interpolation(current, s, split)
        r = transpose(p)
        coarse = matmat(matmat(r, current), p)
        levels.append(AmgLevel(current, p, r, split))
        zero_rows.append(_count_zero_interp_rows(split, p))
        current = coarse
    levels.append(AmgLevel(current))
    zero_rows.append(0)
    coarsest = _factor_coarsest(
        current, len(levels) - 1, max(4096, opts.coarse_cutoff)
    )
    elapsed = time.perf_counter() - start
    return AmgHierarchy(
        tuple(levels), coarsest, opts, elapsed, tuple(zero_rows)
    )


def vcycle(
    h: AmgHierarchy, level: int, b: DenseVector, x: DenseVector
) -> DenseVector:
    """One V-cycle at ``level``; returns the corrected iterate.

    At the coarsest level this is the exact dense solve regardless of
    ``x``.  Otherwise: ``k1`` forward sweeps, restrict the residual,
    recurse from a zero coarse guess, correct, ``k2`` backward sweeps.
    """
    if level >= len(h.levels):
        raise ValueError(f"level {level} out of range")
    if level == len(h.levels) - 1:
        return scipy.linalg.lu_solve(h.coarsest, b, check_finite=False)
    lev = h.levels[level]
    a = lev.a
    x = np.array(x, dtype=np.float64, copy=True)
    if h.opts.pre_sweeps:
        kernels.gs_sweeps(
            a.indptr, a.indices, a.values, x, b, h.opts.pre_sweeps, True
        )
    residual = b - kernels.csr_matvec(a.indptr, a.indices, a.values, x)
    coarse_b = kernels.csr_matvec(
        lev.r.indptr, lev.r.indices, lev.r.values, residual
    )
    correction = vcycle(
        h, level + 1, coarse_b, np.zeros(lev.r.nrows, dtype=np.float64)
    )
    x += kernels.csr_matvec(
        lev.p.indptr, lev.p.indices, lev.p.values, correction
    )
    if h.opts.post_sweeps:
        kernels.gs_sweeps(
            a.indptr, a.indices, a.values, x, b, h.opts.post_sweeps, False
        )
    return x


def _validate_smoothable(a: SparseMatrix) -> None:
    diag, present = diagonal(a)
    bad = ~present | (diag == 0.0)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise SmootherError(f"missing or zero diagonal at row {row}")


def solve(
    h: AmgHierarchy, b: DenseVector, x0: DenseVector | None = None
) -> tuple[DenseVector, SolveReport]:
    """Iterate V-cycles until the relative residual drops below ``tol``.

    The residual history records ``||b - A x^k||_2 / ||b||_2`` for every
    iterate including ``x^0``.  A zero right-hand side short-circuits to
    the zero solution (converged, zero iterations, empty history).
    Hitting ``max_iter`` returns ``converged=False``; a non-finite
    residual raises :class:`DivergenceError` instead.
    """
    a = h.levels[0].a
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.nrows,):
        raise ValueError(f"b has shape {b.shape}, expected ({a.nrows},)")
    start = time.perf_counter()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        report = SolveReport(0, (), True, h.setup_seconds, 0.0)
        return np.zeros(a.nrows, dtype=np.float64), report
    if x0 is None:
        x = np.zeros(a.nrows, dtype=np.float64)
    else:
        x = np.array(x0, dtype=np.float64, copy=True)
        if x.shape != (a.nrows,):
            raise ValueError(f"x0 has shape {x.shape}, expected ({a.nrows},)")
    for level in h.levels[:-1]:
        _validate_smoothable(level.a)
    history = [
        float(
            np.linalg.norm(
                b - kernels.csr_matvec(a.indptr, a.indices, a.values, x)
            )
            / bnorm
        )
    ]
    converged = history[0] < h.opts.tol
    iterations = 0
    while not converged and iterations < h.opts.max_iter:
        x = vcycle(h, 0, b, x)
        rel = float(
            np.linalg.norm(
                b - kernels.csr_matvec(a.indptr, a.indices, a.values, x)
            )
            / bnorm
        )
        if not np.isfinite(rel):
            raise DivergenceError(
                f"non-finite residual after iteration {iterations + 1}"
            )
        history.append(rel)
        iterations += 1
        converged = rel < h.opts.tol
    report = SolveReport(
        iterations,
        tuple(history),
        bool(converged),
        h.setup_seconds,
        time.perf_counter() - start,
    )
    return x, report
