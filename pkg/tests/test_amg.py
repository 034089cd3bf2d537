"""Strength, splitting, interpolation, Galerkin setup, and V-cycle solves.

Oracles are dense: strength sets recomputed by scalar loops, two-grid
cycles replayed with explicit triangular inverses, Galerkin products
checked against ``P.T @ A @ P`` on dense copies.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from amgtheta import amg
from amgtheta.problems import ProblemSpec, assemble
from amgtheta.sparse import csr_from_triplets, from_dense, identity, to_dense


def tridiag(n, lo, di, up):
    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i)
        cols.append(i)
        vals.append(di)
        if i > 0:
            rows.append(i)
            cols.append(i - 1)
            vals.append(lo)
        if i < n - 1:
            rows.append(i)
            cols.append(i + 1)
            vals.append(up)
    return csr_from_triplets(
        n, n, np.array(rows), np.array(cols), np.array(vals, dtype=float)
    )


def laplacian_1d(n):
    return tridiag(n, -1.0, 2.0, -1.0)


def poisson(n):
    return assemble(ProblemSpec(kind="ConstPoisson", n=n))


def strength_sets_dense(dense, theta, explicit):
    """Scalar-loop oracle: strong dependency sets from a dense array.

    ``explicit`` marks stored positions, so stored zeros are present but
    can never pass the threshold test against a positive row maximum.
    """
    n = dense.shape[0]
    out = []
    for i in range(n):
        offdiag = [abs(dense[i, j]) for j in range(n) if j != i and explicit[i, j]]
        rowmax = max(offdiag, default=0.0)
        if rowmax <= 0.0:
            out.append(set())
            continue
        out.append(
            {
                j
                for j in range(n)
                if j != i and explicit[i, j] and abs(dense[i, j]) >= theta * rowmax
            }
        )
    return out


def graph_sets(adj):
    return [set(adj.row(i).tolist()) for i in range(adj.indptr.shape[0] - 1)]


class TestStrengthGraph:
    def test_brute_force_oracle(self):
        dense = np.array(
            [
                [10.0, -3.0, 0.0, 1.0],
                [-3.0, 8.0, 0.5, 0.0],
                [0.0, 0.5, 5.0, -0.5],
                [1.0, 0.0, -0.5, 9.0],
            ]
        )
        explicit = np.array(
            [
                [True, True, True, True],
                [True, True, True, False],
                [False, True, True, True],
                [True, False, True, True],
            ]
        )
        rows, cols = np.nonzero(explicit)
        a = csr_from_triplets(4, 4, rows, cols, dense[rows, cols])
        s = amg.strength_graph(a, 0.4)
        assert graph_sets(s.strong) == strength_sets_dense(dense, 0.4, explicit)

    def test_duality(self):
        inst = poisson(12)
        s = amg.strength_graph(inst.a, 0.3)
        forward = graph_sets(s.strong)
        backward = graph_sets(s.strong_transpose)
        for i, deps in enumerate(forward):
            for j in deps:
                assert i in backward[j]
        assert sum(len(x) for x in forward) == sum(len(x) for x in backward)

    def test_theta_one_keeps_only_row_maxima(self):
        a = tridiag(6, -1.0, 2.0, -0.5)
        s = amg.strength_graph(a, 1.0)
        # interior rows: left neighbor -1 is the unique maximum
        assert graph_sets(s.strong)[2] == {1}
        assert graph_sets(s.strong)[0] == {1}  # only neighbor, -0.5

    def test_monotone_in_theta(self):
        inst = poisson(10)
        prev = None
        for theta in (0.1, 0.3, 0.6, 1.0):
            cur = graph_sets(amg.strength_graph(inst.a, theta).strong)
            if prev is not None:
                for a_set, b_set in zip(cur, prev):
                    assert a_set <= b_set
            prev = cur

    def test_diagonal_matrix_has_empty_sets(self):
        a = identity(5)
        s = amg.strength_graph(a, 0.5)
        assert all(len(r) == 0 for r in graph_sets(s.strong))

    def test_explicit_zeros_never_strong(self):
        a = csr_from_triplets(
            2, 2, [0, 0, 1, 1], [0, 1, 0, 1], [1.0, 0.0, -2.0, 1.0]
        )
        s = amg.strength_graph(a, 0.5)
        assert graph_sets(s.strong) == [set(), {0}]

    @pytest.mark.parametrize("theta", [0.0, -0.1, 1.5])
    def test_theta_out_of_range(self, theta):
        with pytest.raises(ValueError, match="theta"):
            amg.strength_graph(identity(3), theta)

    def test_rectangular_rejected(self):
        a = csr_from_triplets(2, 3, [0], [1], [1.0])
        with pytest.raises(ValueError, match="square"):
            amg.strength_graph(a, 0.5)


class TestRugeStubenSplit:
    def test_diagonal_matrix_all_fine(self):
        s = amg.strength_graph(identity(6), 0.5)
        split = amg.cf_split_rs(s)
        assert split.n_coarse == 0

    def test_laplacian_1d_fixture(self):
        # Greedy order: index 1 first (highest measure, lowest index),
        # then the bumped odd points left to right.
        s = amg.strength_graph(laplacian_1d(9), 0.25)
        split = amg.cf_split_rs(s)
        assert split.is_coarse.tolist() == [
            False, True, False, True, False, True, False, True, False,
        ]

    def test_every_fine_point_strongly_depends_on_coarse(self):
        inst = poisson(16)
        s = amg.strength_graph(inst.a, 0.25)
        split = amg.cf_split_rs(s)
        coarse = set(np.nonzero(split.is_coarse)[0].tolist())
        assert coarse
        for i in range(s.n):
            deps = set(s.strong.row(i).tolist())
            if not split.is_coarse[i] and deps:
                assert deps & coarse, f"fine point {i} has no strong C neighbor"

    def test_deterministic(self):
        inst = poisson(20)
        s = amg.strength_graph(inst.a, 0.3)
        first = amg.cf_split_rs(s).is_coarse
        second = amg.cf_split_rs(s).is_coarse
        assert np.array_equal(first, second)


class TestPmisSplit:
    def test_diagonal_matrix_all_fine(self):
        s = amg.strength_graph(identity(6), 0.5)
        split = amg.cf_split_pmis(s, seed=0)
        assert split.n_coarse == 0

    @pytest.mark.parametrize(
        "matrix",
        [laplacian_1d(40), poisson(14).a],
        ids=["lap1d", "poisson2d"],
    )
    def test_independence_and_coverage(self, matrix):
        s = amg.strength_graph(matrix, 0.25)
        split = amg.cf_split_pmis(s, seed=3)
        is_c = split.is_coarse
        sym = [
            set(s.strong.row(i).tolist()) | set(s.strong_transpose.row(i).tolist())
            for i in range(s.n)
        ]
        for i in range(s.n):
            if is_c[i]:
                # no two C points adjacent in the symmetrized strong graph
                assert not any(is_c[j] for j in sym[i])
            elif sym[i]:
                # every non-isolated F point sees a C point
                assert any(is_c[j] for j in sym[i])

    def test_seed_determinism(self):
        s = amg.strength_graph(poisson(14).a, 0.25)
        a = amg.cf_split_pmis(s, seed=7).is_coarse
        b = amg.cf_split_pmis(s, seed=7).is_coarse
        c = amg.cf_split_pmis(s, seed=8).is_coarse
        assert np.array_equal(a, b)
        assert a.shape == c.shape  # different seed still legal


class TestInterpolation:
    def test_all_coarse_gives_identity(self):
        a = laplacian_1d(5)
        s = amg.strength_graph(a, 0.5)
        split = amg.CfSplit(np.ones(5, dtype=bool))
        p = amg.build_interpolation(a, s, split)
        assert_allclose(to_dense(p), np.eye(5), atol=0.0)

    def test_laplacian_halving_weights(self):
        a = laplacian_1d(9)
        s = amg.strength_graph(a, 0.25)
        split = amg.cf_split_rs(s)
        p = to_dense(amg.build_interpolation(a, s, split))
        # F point 2 sits between C points 1 and 3 (coarse columns 0, 1)
        assert_allclose(p[2], [0.5, 0.5, 0.0, 0.0], atol=1e-15)
        assert_allclose(p[0], [0.5, 0.0, 0.0, 0.0], atol=1e-15)
        assert_allclose(p[1], [1.0, 0.0, 0.0, 0.0], atol=0.0)

    def test_preserves_constants_on_zero_row_sums(self):
        # M-matrix with zero row sums: interpolation reproduces the
        # constant vector through P exactly on interpolated rows.
        dense = np.array(
            [
                [2.0, -1.0, -1.0, 0.0],
                [-1.0, 3.0, -1.0, -1.0],
                [-1.0, -1.0, 3.0, -1.0],
                [0.0, -1.0, -1.0, 2.0],
            ]
        )
        a = from_dense(dense)
        s = amg.strength_graph(a, 0.25)
        split = amg.cf_split_rs(s)
        p = to_dense(amg.build_interpolation(a, s, split))
        ones_c = np.ones(p.shape[1])
        assert_allclose(p @ ones_c, np.ones(4), atol=1e-12)

    def test_zero_diagonal_rejected(self):
        dense = np.array([[0.0, -1.0], [-1.0, 2.0]])
        a = from_dense(dense)
        s = amg.strength_graph(a, 0.5)
        split = amg.CfSplit(np.array([False, True]))
        with pytest.raises(amg.SetupError, match="row 0"):
            amg.build_interpolation(a, s, split)


class TestSetup:
    def test_single_unknown_single_level(self):
        a = csr_from_triplets(1, 1, [0], [0], [3.0])
        h = amg.setup_hierarchy(a, amg.SolverOptions())
        assert h.level_sizes == (1,)

    def test_diagonal_stall_one_level(self):
        a = identity(30)
        h = amg.setup_hierarchy(a, amg.SolverOptions(coarse_cutoff=4))
        assert len(h.levels) == 1
        x, rep = amg.solve(h, np.arange(1.0, 31.0))
        assert rep.converged and rep.iterations <= 1
        assert_allclose(x, np.arange(1.0, 31.0), rtol=1e-12)

    @pytest.mark.parametrize("coarsening", ["rs", "pmis"])
    def test_poisson_hierarchy_shape(self, coarsening):
        inst = poisson(16)
        opts = amg.SolverOptions(theta=0.25, coarsening=coarsening)
        h = amg.setup_hierarchy(inst.a, opts)
        sizes = h.level_sizes
        assert all(a > b for a, b in zip(sizes, sizes[1:]))
        for a_sz, b_sz in zip(sizes, sizes[1:]):
            assert 1.8 <= a_sz / b_sz <= 8.0
        assert sizes[-1] <= max(16, opts.coarse_cutoff)

    def test_galerkin_matches_dense_product(self):
        inst = poisson(16)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions(theta=0.25))
        for lev, nxt in zip(h.levels, h.levels[1:]):
            p = to_dense(lev.p)
            expected = p.T @ to_dense(lev.a) @ p
            assert_allclose(to_dense(nxt.a), expected, atol=1e-11)
            assert_allclose(to_dense(lev.r), p.T, atol=0.0)

    def test_singular_coarsest_named_level(self):
        a = csr_from_triplets(
            2, 2, [0, 0, 1, 1], [0, 1, 0, 1], [1.0, -1.0, -1.0, 1.0]
        )
        with pytest.raises(amg.SetupError, match="level 1"):
            amg.setup_hierarchy(a, amg.SolverOptions(coarse_cutoff=1))

    def test_rectangular_rejected(self):
        a = csr_from_triplets(2, 3, [0], [1], [1.0])
        with pytest.raises(ValueError, match="square"):
            amg.setup_hierarchy(a, amg.SolverOptions())


def dense_two_grid(a_dense, p_dense, b, x0, pre, post):
    """Replay one V-cycle of a two-level hierarchy with dense algebra."""
    lower = np.tril(a_dense)
    upper = np.triu(a_dense)
    x = x0.copy()
    for _ in range(pre):
        x = x + np.linalg.solve(lower, b - a_dense @ x)
    coarse = p_dense.T @ a_dense @ p_dense
    x = x + p_dense @ np.linalg.solve(coarse, p_dense.T @ (b - a_dense @ x))
    for _ in range(post):
        x = x + np.linalg.solve(upper, b - a_dense @ x)
    return x


class TestVcycle:
    def test_matches_dense_two_grid(self):
        a = laplacian_1d(9)
        opts = amg.SolverOptions(theta=0.25, coarse_cutoff=4)
        h = amg.setup_hierarchy(a, opts)
        assert len(h.levels) == 2
        rng = np.random.default_rng(5)
        b = rng.standard_normal(9)
        x0 = rng.standard_normal(9)
        got = amg.vcycle(h, 0, b, x0)
        want = dense_two_grid(
            to_dense(a), to_dense(h.levels[0].p), b, x0, 1, 1
        )
        assert_allclose(got, want, atol=1e-12)

    def test_coarsest_level_is_exact(self):
        a = poisson(4).a  # 9 unknowns, below the default cutoff
        h = amg.setup_hierarchy(a, amg.SolverOptions())
        assert len(h.levels) == 1
        b = np.arange(1.0, float(a.nrows) + 1.0)
        x = amg.vcycle(h, 0, b, np.zeros(a.nrows))
        assert_allclose(to_dense(a) @ x, b, rtol=1e-12)

    def test_zero_inputs_stay_zero(self):
        inst = poisson(8)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions(coarse_cutoff=4))
        out = amg.vcycle(h, 0, np.zeros(inst.a.nrows), np.zeros(inst.a.nrows))
        assert_allclose(out, 0.0, atol=0.0)

    def test_level_out_of_range(self):
        inst = poisson(8)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions())
        with pytest.raises(ValueError, match="level"):
            amg.vcycle(h, 99, np.zeros(inst.a.nrows), np.zeros(inst.a.nrows))


class TestSolve:
    def test_exact_start_zero_iterations(self):
        inst = poisson(8)
        x_star = np.linalg.solve(to_dense(inst.a), inst.b)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions())
        x, rep = amg.solve(h, inst.b, x0=x_star)
        assert rep.iterations == 0 and rep.converged
        assert len(rep.residual_history) == 1

    def test_zero_rhs_short_circuits(self):
        inst = poisson(8)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions())
        x, rep = amg.solve(h, np.zeros(inst.a.nrows))
        assert rep.converged and rep.iterations == 0
        assert rep.residual_history == ()
        assert_allclose(x, 0.0, atol=0.0)

    def test_poisson_reference_iteration_count(self):
        inst = poisson(64)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions(theta=0.256))
        x, rep = amg.solve(h, inst.b)
        assert rep.converged
        assert rep.iterations <= 25
        dense_x = np.linalg.solve(to_dense(inst.a), inst.b)
        assert np.max(np.abs(x - dense_x)) < 1e-6

    @pytest.mark.parametrize("n", [16, 32, 64])
    @pytest.mark.parametrize("theta", [0.1, 0.25, 0.5])
    def test_residuals_decrease_monotonically(self, n, theta):
        inst = poisson(n)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions(theta=theta))
        _, rep = amg.solve(h, inst.b)
        hist = rep.residual_history
        assert rep.converged
        assert all(b < a for a, b in zip(hist, hist[1:]))

    def test_scale_invariant_history(self):
        inst = poisson(24)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions())
        _, rep1 = amg.solve(h, inst.b)
        _, rep4 = amg.solve(h, 4.0 * inst.b)
        assert rep1.iterations == rep4.iterations
        assert rep1.residual_history == rep4.residual_history

    def test_divergence_raises(self):
        a = tridiag(24, -1.0, 0.1, -1.0)  # indefinite, weak diagonal
        h = amg.setup_hierarchy(
            a, amg.SolverOptions(theta=0.25, coarse_cutoff=4, max_iter=100000)
        )
        with pytest.raises(amg.DivergenceError, match="non-finite residual"):
            amg.solve(h, np.ones(24))

    def test_cap_reports_nonconvergence(self):
        inst = poisson(32)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions(max_iter=2))
        _, rep = amg.solve(h, inst.b)
        assert not rep.converged
        assert rep.iterations == 2

    def test_report_json_keys(self):
        inst = poisson(8)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions())
        _, rep = amg.solve(h, inst.b)
        payload = amg.report_to_json(rep)
        assert sorted(payload) == [
            "converged",
            "iterations",
            "residual_history",
            "setup_seconds",
            "solve_seconds",
        ]

    def test_rhs_shape_checked(self):
        inst = poisson(8)
        h = amg.setup_hierarchy(inst.a, amg.SolverOptions())
        with pytest.raises(ValueError, match="shape"):
            amg.solve(h, np.zeros(3))


class TestOptionsValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"theta": 0.0},
            {"theta": 1.2},
            {"pre_sweeps": 0, "post_sweeps": 0},
            {"pre_sweeps": -1},
            {"coarsening": "aggressive"},
            {"coarse_cutoff": 0},
            {"max_levels": 0},
            {"max_iter": 0},
            {"tol": 0.0},
        ],
    )
    def test_bad_options_rejected(self, kwargs):
        with pytest.raises(ValueError):
            amg.SolverOptions(**kwargs)
