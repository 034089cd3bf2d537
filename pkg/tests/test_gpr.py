"""Kernel forms, posterior exactness, likelihood training, serialization.

Closed-form oracles: scalar posteriors evaluated by hand, dense
inverse/determinant likelihoods, central finite differences for every
analytic gradient.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from amgtheta import gpr


def toy_data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, n)
    y = np.sin(x) + 0.1 * rng.standard_normal(n)
    return x, y


def composite_spec():
    return gpr.KernelSpec(
        (
            gpr.KernelTerm("gaussian", 1.3),
            gpr.KernelTerm("rationalquadratic", 0.8, shape=1.7),
            gpr.KernelTerm("matern52", 2.1),
            gpr.KernelTerm("periodic", 0.9, period=2.4),
            gpr.KernelTerm("laplacian", 1.1),
        ),
        (0.7, 1.2, 0.5, 0.9, 0.3),
    )


def gaussian_process_sample(x, ell, seed):
    """Exact draw from a zero-mean GP with a Gaussian kernel on std(x)."""
    xs = (x - x.mean()) / x.std()
    d = xs[:, None] - xs[None, :]
    k = np.exp(-d * d / (2.0 * ell * ell))
    rng = np.random.default_rng(seed)
    return np.linalg.cholesky(k + 1e-10 * np.eye(x.shape[0])) @ rng.standard_normal(
        x.shape[0]
    )


CLOSED_FORMS = {
    "gaussian": lambda d, t: math.exp(-(d * d) / (2 * t.length**2)),
    "laplacian": lambda d, t: math.exp(-abs(d) / t.length),
    "exponential": lambda d, t: math.exp(-abs(d) / t.length),
    "rationalquadratic": lambda d, t: (
        1 + d * d / (2 * t.shape * t.length**2)
    ) ** (-t.shape),
    "matern52": lambda d, t: (
        lambda u: (1 + u + u * u / 3) * math.exp(-u)
    )(math.sqrt(5) * abs(d) / t.length),
    "periodic": lambda d, t: math.exp(
        -2 * math.sin(math.pi * abs(d) / t.period) ** 2 / t.length**2
    ),
}


class TestKernelEval:
    @pytest.mark.parametrize("base", gpr.BASES)
    def test_closed_forms(self, base):
        term = gpr.KernelTerm(
            base,
            length=0.8,
            shape=1.5 if base == "rationalquadratic" else None,
            period=2.0 if base == "periodic" else None,
        )
        spec = gpr.KernelSpec((term,), (1.0,))
        for d in (0.0, 0.3, 1.0, 2.7, -1.4):
            assert_allclose(
                gpr.kernel_eval(spec, d, 0.0),
                CLOSED_FORMS[base](d, term),
                rtol=1e-14,
            )

    def test_zero_distance_sums_coefficients(self):
        spec = composite_spec()
        assert_allclose(
            gpr.kernel_eval(spec, 3.7, 3.7), sum(spec.coeffs), rtol=1e-14
        )

    def test_linearity_of_combination(self):
        g = gpr.KernelSpec((gpr.KernelTerm("gaussian", 1.0),), (1.0,))
        l = gpr.KernelSpec((gpr.KernelTerm("laplacian", 1.0),), (1.0,))
        combo = gpr.KernelSpec(
            (gpr.KernelTerm("gaussian", 1.0), gpr.KernelTerm("laplacian", 1.0)),
            (2.0, 3.0),
        )
        d = 0.9
        assert_allclose(
            gpr.kernel_eval(combo, d, 0.0),
            2 * gpr.kernel_eval(g, d, 0.0) + 3 * gpr.kernel_eval(l, d, 0.0),
            rtol=1e-14,
        )

    def test_gaussian_reference_value(self):
        spec = gpr.spec_from_names(["gaussian"])
        assert_allclose(gpr.kernel_eval(spec, 1.0, 0.0), math.exp(-0.5), rtol=1e-12)


class TestSpecValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"base": "cubic"},
            {"base": "gaussian", "length": 0.0},
            {"base": "rationalquadratic"},
            {"base": "rationalquadratic", "shape": -1.0},
            {"base": "periodic"},
            {"base": "gaussian", "shape": 1.0},
            {"base": "laplacian", "period": 1.0},
        ],
    )
    def test_bad_terms(self, kwargs):
        with pytest.raises(ValueError):
            gpr.KernelTerm(**kwargs)

    def test_bad_coefficients(self):
        term = gpr.KernelTerm("gaussian")
        with pytest.raises(ValueError, match="nonnegative"):
            gpr.KernelSpec((term,), (-1.0,))
        with pytest.raises(ValueError, match="positive"):
            gpr.KernelSpec((term,), (0.0,))
        with pytest.raises(ValueError, match="coefficients"):
            gpr.KernelSpec((term,), (1.0, 2.0))
        with pytest.raises(ValueError, match="at least one term"):
            gpr.KernelSpec((), ())


class TestGram:
    def test_single_point(self):
        spec = composite_spec()
        k = gpr.gram(spec, [3.0], noise_var=1e-4)
        assert_allclose(k, [[sum(spec.coeffs) + 1e-4]], rtol=1e-14)

    def test_duplicate_points_factorizable(self):
        spec = gpr.spec_from_names(["gaussian"])
        k = gpr.gram(spec, [1.0, 1.0, 2.0], noise_var=1e-8)
        np.linalg.cholesky(k)  # noise absorbs the rank deficiency

    def test_eigenvalue_floor_matches_noise(self):
        rng = np.random.default_rng(3)
        xs = rng.uniform(0, 5, 5)
        noise = 1e-6
        k = gpr.gram(gpr.spec_from_names(["gaussian"]), xs, noise)
        eigs = np.linalg.eigvalsh(k)
        assert np.all(eigs >= noise * (1 - 1e-8))

    @pytest.mark.parametrize("seed", range(6))
    def test_composite_gram_psd_before_noise(self, seed):
        rng = np.random.default_rng(seed)
        spec = composite_spec()
        xs = rng.uniform(-4, 4, 10)
        k = gpr.gram(spec, xs, noise_var=0.0) - 0.0 * np.eye(10)
        assert np.linalg.eigvalsh(k).min() >= -1e-9

    def test_conditioning_error_on_indefinite_matrix(self):
        # eigenvalue -1 sits far beyond the 1e-6 jitter ceiling
        with pytest.raises(gpr.ConditioningError, match="jitter"):
            gpr._chol_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestFit:
    def test_single_pair_scalar_weights(self):
        spec = gpr.spec_from_names(["gaussian"])
        m = gpr.fit([2.0], [3.0], spec, noise_var=1e-4)
        assert_allclose(m.weights, [3.0 / (1.0 + 1e-4)], rtol=1e-14)

    def test_refit_is_deterministic(self):
        x, y = toy_data()
        spec = composite_spec()
        a = gpr.fit(x, y, spec)
        b = gpr.fit(x, y, spec)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.chol, b.chol)

    def test_factor_reconstruction_and_weights(self):
        x, y = toy_data(10, seed=4)
        m = gpr.fit(x, y, composite_spec(), noise_var=1e-8)
        xs = (x - m.x_mean) / m.x_scale
        k = gpr._cov(m.spec, gpr._diff(xs, xs)) + 1e-8 * np.eye(10)
        recon = m.chol @ m.chol.T
        assert np.max(np.abs(recon - k)) / np.max(np.abs(k)) < 1e-10
        assert np.max(np.abs(k @ m.weights - (y - m.mean_const))) < 1e-10

    def test_shape_errors(self):
        spec = gpr.spec_from_names(["gaussian"])
        with pytest.raises(ValueError, match="at least one"):
            gpr.fit([], [], spec)
        with pytest.raises(ValueError, match="targets"):
            gpr.fit([1.0, 2.0], [1.0], spec)
        with pytest.raises(ValueError, match="noise_var"):
            gpr.fit([1.0], [1.0], spec, noise_var=-1e-3)


class TestPredict:
    def test_single_pair_closed_form(self):
        spec = gpr.spec_from_names(["gaussian"])
        m = gpr.fit([0.0], [1.0], spec, noise_var=1e-8)
        p = gpr.predict(m, 1.0)
        assert_allclose(p.mean, math.exp(-0.5) / (1 + 1e-8), rtol=1e-12)

    def test_interpolates_training_targets(self):
        # well-separated inputs keep the Gram clean enough that a tiny
        # noise floor behaves as exact interpolation
        x = np.linspace(0.0, 10.0, 6)
        y = np.sin(x)
        m = gpr.fit(x, y, gpr.spec_from_names(["gaussian"]), noise_var=1e-12)
        preds = [gpr.predict(m, xi).mean for xi in x]
        assert np.max(np.abs(np.array(preds) - y)) < 1e-6

    def test_prior_reversion_far_away(self):
        x, y = toy_data(8, seed=1)
        spec = gpr.spec_from_names(["gaussian"], length=0.5)
        m = gpr.fit(x, y, spec, noise_var=1e-8)
        p = gpr.predict(m, 1e6)
        assert abs(p.mean) < 1e-10
        assert_allclose(p.variance, gpr.prior_variance(spec), rtol=1e-10)

    def test_interval_formula(self):
        x, y = toy_data(8, seed=2)
        m = gpr.fit(x, y, composite_spec())
        p = gpr.predict(m, 4.2)
        sd = math.sqrt(p.variance)
        assert_allclose(p.interval95[0], p.mean - 1.96 * sd, rtol=1e-14)
        assert_allclose(p.interval95[1], p.mean + 1.96 * sd, rtol=1e-14)
        assert p.clamped in (0, 1)

    def test_variance_never_exceeds_prior(self):
        x, y = toy_data(10, seed=9)
        spec = composite_spec()
        m = gpr.fit(x, y, spec)
        prior = gpr.prior_variance(spec)
        for x_star in np.linspace(-5, 15, 41):
            assert gpr.predict(m, x_star).variance <= prior + 1e-10

    @staticmethod
    def _fixed_map_model(x, y, spec, noise_var):
        """Fit with the identity input map so kernels compare exactly.

        ``fit`` restandardizes per dataset, which changes the effective
        raw-space kernel between a subset and its superset; conditioning
        monotonicity is a statement about one fixed kernel.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        k = gpr._cov(spec, gpr._diff(x, x)) + noise_var * np.eye(x.shape[0])
        chol, _ = gpr._chol_with_jitter(k)
        import scipy.linalg

        weights = scipy.linalg.cho_solve((chol, True), y)
        return gpr.GprModel(
            train_x=x, train_y=y, spec=spec, noise_var=noise_var,
            chol=chol, weights=weights,
        )

    @pytest.mark.parametrize("seed", range(20))
    def test_more_data_never_raises_variance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 10, 8)
        y = np.sin(x)
        spec = gpr.spec_from_names(["gaussian"])
        small = self._fixed_map_model(x[:7], y[:7], spec, 1e-8)
        full = self._fixed_map_model(x, y, spec, 1e-8)
        x_star = float(rng.uniform(0, 10))
        assert (
            gpr.predict(full, x_star).variance
            <= gpr.predict(small, x_star).variance + 1e-8
        )


class TestLogMarginalLikelihood:
    def test_single_point_formula(self):
        spec = gpr.spec_from_names(["gaussian"])
        noise = 1e-4
        m = gpr.fit([1.0], [0.7], spec, noise_var=noise)
        v = 1.0 + noise
        expected = -0.5 * 0.7**2 / v - 0.5 * math.log(v) - 0.5 * math.log(2 * math.pi)
        assert_allclose(gpr.log_marginal_likelihood(m), expected, rtol=1e-12)

    def test_zero_targets_drop_quadratic_term(self):
        x, _ = toy_data(6, seed=3)
        m = gpr.fit(x, np.zeros(6), composite_spec(), noise_var=1e-4)
        xs = (x - m.x_mean) / m.x_scale
        k = gpr._cov(m.spec, gpr._diff(xs, xs)) + 1e-4 * np.eye(6)
        expected = -0.5 * np.linalg.slogdet(k)[1] - 3.0 * math.log(2 * math.pi)
        assert_allclose(gpr.log_marginal_likelihood(m), expected, rtol=1e-12)

    def test_dense_oracle(self):
        x, y = toy_data(8, seed=5)
        noise = 1e-4
        m = gpr.fit(x, y, composite_spec(), noise_var=noise)
        xs = (x - m.x_mean) / m.x_scale
        k = gpr._cov(m.spec, gpr._diff(xs, xs)) + noise * np.eye(8)
        expected = (
            -0.5 * y @ np.linalg.inv(k) @ y
            - 0.5 * np.linalg.slogdet(k)[1]
            - 4.0 * math.log(2 * math.pi)
        )
        assert abs(gpr.log_marginal_likelihood(m) - expected) < 1e-8

    def test_gradient_matches_finite_differences(self):
        x, y = toy_data(12, seed=0)
        spec = composite_spec()
        m = gpr.fit(x, y, spec, noise_var=1e-4)
        _, grad = gpr.log_marginal_likelihood_gradient(m)
        xs = (x - m.x_mean) / m.x_scale
        d = gpr._diff(xs, xs)
        packed = gpr._pack(spec)
        eps = 1e-6
        for i in range(packed.shape[0]):
            up, dn = packed.copy(), packed.copy()
            up[i] += eps
            dn[i] -= eps
            lu, _ = gpr._lml_and_grad(gpr._unpack(spec, up), d, y, 1e-4)
            ld, _ = gpr._lml_and_grad(gpr._unpack(spec, dn), d, y, 1e-4)
            assert abs((lu - ld) / (2 * eps) - grad[i]) < 1e-6


class TestTrain:
    def test_recovers_generating_lengthscale(self):
        x = np.linspace(0, 20, 40)
        y = gaussian_process_sample(x, ell=2.0, seed=42)
        m = gpr.train(x, y, gpr.spec_from_names(["gaussian"]), noise_var=1e-8, seed=1)
        assert 0.7 * 2.0 <= m.spec.terms[0].length <= 1.3 * 2.0

    def test_generator_term_dominates_coefficients(self):
        x = np.linspace(0, 20, 40)
        y = gaussian_process_sample(x, ell=2.0, seed=42)
        m = gpr.train(
            x, y, gpr.spec_from_names(["gaussian", "laplacian"]),
            noise_var=1e-8, seed=1,
        )
        coeffs = np.array(m.spec.coeffs)
        assert coeffs[0] / coeffs.sum() >= 0.7

    def test_final_likelihood_beats_every_start(self):
        x, y = toy_data(20, seed=8)
        spec = gpr.spec_from_names(["gaussian", "matern52"])
        m = gpr.train(x, y, spec, seed=3)
        final = gpr.log_marginal_likelihood(m)
        xs = (x - m.x_mean) / m.x_scale
        d = gpr._diff(xs, xs)
        rng = np.random.default_rng(3)
        starts = [gpr._pack(spec)]
        n_hyper = starts[0].shape[0] - 2
        for _ in range(7):
            drawn = starts[0].copy()
            drawn[:n_hyper] = rng.uniform(*gpr._START_RANGE, size=n_hyper)
            starts.append(drawn)
        for start in starts:
            init_lml, _ = gpr._lml_and_grad(
                gpr._unpack(spec, start), d, y, m.noise_var
            )
            assert final >= init_lml - 1e-9

    def test_first_order_stationarity(self):
        x = np.linspace(0, 20, 40)
        y = gaussian_process_sample(x, ell=2.0, seed=42)
        for names in (["gaussian"], ["gaussian", "laplacian"]):
            m = gpr.train(x, y, gpr.spec_from_names(names), noise_var=1e-8, seed=1)
            assert gpr.stationarity_gap(m) < 1e-5

    def test_seeded_determinism(self):
        x, y = toy_data(18, seed=6)
        spec = gpr.spec_from_names(["gaussian", "laplacian"])
        a = gpr.train(x, y, spec, seed=11)
        b = gpr.train(x, y, spec, seed=11)
        assert a.spec == b.spec
        assert np.array_equal(a.weights, b.weights)

    def test_zero_targets_stay_finite(self):
        x, _ = toy_data(10, seed=2)
        m = gpr.train(x, np.zeros(10), gpr.spec_from_names(["gaussian"]), seed=0)
        assert math.isfinite(m.spec.terms[0].length)
        xs = (x - m.x_mean) / m.x_scale
        k = gpr._cov(m.spec, gpr._diff(xs, xs)) + m.noise_var * np.eye(10)
        expected = -0.5 * np.linalg.slogdet(k)[1] - 5.0 * math.log(2 * math.pi)
        assert_allclose(gpr.log_marginal_likelihood(m), expected, rtol=1e-10)

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="two pairs"):
            gpr.train([1.0], [1.0], gpr.spec_from_names(["gaussian"]))


class TestRetrain:
    def test_noop_keeps_likelihood(self):
        x, y = toy_data(16, seed=10)
        m = gpr.train(x, y, gpr.spec_from_names(["gaussian", "laplacian"]), seed=1)
        again = gpr.retrain(m, [], [], seed=1)
        assert (
            abs(gpr.log_marginal_likelihood(again) - gpr.log_marginal_likelihood(m))
            < 1e-10
        )

    def test_duplicate_point_still_factorizable(self):
        x, y = toy_data(10, seed=12)
        m = gpr.train(x, y, gpr.spec_from_names(["gaussian"]), seed=0)
        again = gpr.retrain(m, [x[0]], [y[0]], seed=0)
        assert again.n_train == 11

    def test_beats_warm_start_on_enlarged_data(self):
        x, y = toy_data(14, seed=13)
        m = gpr.train(x, y, gpr.spec_from_names(["gaussian"]), seed=2)
        new_x = np.array([11.0, 12.5])
        new_y = np.sin(new_x)
        again = gpr.retrain(m, new_x, new_y, seed=2)
        warm = gpr.fit(
            np.concatenate([x, new_x]), np.concatenate([y, new_y]),
            m.spec, m.noise_var,
        )
        assert (
            gpr.log_marginal_likelihood(again)
            >= gpr.log_marginal_likelihood(warm) - 1e-9
        )


class TestPosteriorSampling:
    def test_joint_matches_pointwise(self):
        x, y = toy_data(10, seed=3)
        m = gpr.fit(x, y, composite_spec())
        xs = np.linspace(1, 9, 5)
        mean, cov = gpr.posterior(m, xs)
        for i, x_star in enumerate(xs):
            p = gpr.predict(m, float(x_star))
            assert_allclose(mean[i], p.mean, rtol=1e-12)
            assert_allclose(cov[i, i], p.variance, atol=1e-10)

    def test_draws_deterministic_and_calibrated(self):
        x, y = toy_data(10, seed=3)
        m = gpr.fit(x, y, gpr.spec_from_names(["gaussian"]))
        xs = np.linspace(1, 9, 4)
        a = gpr.sample_posterior(m, xs, 64, seed=5)
        b = gpr.sample_posterior(m, xs, 64, seed=5)
        assert np.array_equal(a, b)
        big = gpr.sample_posterior(m, xs, 20000, seed=5)
        mean, cov = gpr.posterior(m, xs)
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        assert np.all(np.abs(big.mean(axis=0) - mean) <= 4 * sd / math.sqrt(20000) + 1e-12)


class TestThetaClip:
    def test_clipped_into_unit_interval(self):
        spec = gpr.spec_from_names(["gaussian"])
        high = gpr.fit([0.0, 1.0], [2.0, 2.0], spec)
        low = gpr.fit([0.0, 1.0], [-1.0, -1.0], spec)
        assert gpr.predict_theta(high, 0.5) == 1.0
        assert gpr.predict_theta(low, 0.5) == gpr.THETA_FLOOR


class TestSerialization:
    def test_round_trip_reproduces_model(self):
        x, y = toy_data(12, seed=14)
        m = gpr.train(
            x, y, gpr.spec_from_names(["gaussian", "rationalquadratic", "periodic"]),
            seed=4,
        )
        clone = gpr.model_from_json(gpr.model_to_json(m))
        assert clone.spec == m.spec
        assert np.array_equal(clone.weights, m.weights)
        assert np.array_equal(clone.chol, m.chol)
        assert clone.x_mean == m.x_mean and clone.x_scale == m.x_scale
        p0, p1 = gpr.predict(m, 4.4), gpr.predict(clone, 4.4)
        assert p0 == p1

    def test_spec_dict_round_trip(self):
        spec = composite_spec()
        assert gpr.spec_from_dict(gpr.spec_to_dict(spec)) == spec
