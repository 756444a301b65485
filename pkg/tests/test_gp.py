"""GP core: kernel evaluation, exact inference vs dense oracles, marginal
likelihood, hyperparameter fitting, and the vanishing-lengthscale check."""

import math

import numpy as np
import pytest

from ctxbo import gp


def dense_posterior(data, params, queries, jitter):
    """Brute-force posterior by explicit matrix inversion (the oracle the
    Cholesky route must reproduce)."""
    K = gp.kernel_matrix(data.points, data.points, params)
    K = K + (params.noise_variance + jitter) * np.eye(data.n)
    Kinv = np.linalg.inv(K)
    Ks = gp.kernel_matrix(data.points, queries, params)
    mean = Ks.T @ Kinv @ data.targets
    var = params.signal_variance - np.sum(Ks * (Kinv @ Ks), axis=0)
    return mean, var + params.noise_variance


def dense_lml(data, params, jitter):
    K = gp.kernel_matrix(data.points, data.points, params)
    K = K + (params.noise_variance + jitter) * np.eye(data.n)
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    y = data.targets
    return float(
        -0.5 * y @ np.linalg.inv(K) @ y - 0.5 * logdet - 0.5 * data.n * math.log(2 * math.pi)
    )


def random_fixture(rng, n=None, d=None):
    n = n or int(rng.integers(2, 21))
    d = d or int(rng.integers(1, 7))
    bounds = np.column_stack([np.zeros(d), rng.uniform(1.0, 10.0, d)])
    X = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, d))
    y = rng.normal(size=n) * rng.uniform(0.5, 3.0)
    data = gp.Dataset(X, y, bounds)
    params = gp.KernelParams(
        lengthscales=rng.uniform(0.3, 3.0, d),
        signal_variance=float(rng.uniform(0.5, 2.0)),
        noise_variance=float(rng.uniform(1e-4, 0.2)),
    )
    return data, params, bounds


class TestDataset:
    def test_rejects_point_outside_bounds(self):
        with pytest.raises(ValueError, match="within bounds"):
            gp.Dataset([[2.0]], [0.0], [(0.0, 1.0)])

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError, match="lower < upper"):
            gp.Dataset([[0.5]], [0.0], [(1.0, 0.0)])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="targets"):
            gp.Dataset([[0.5], [0.6]], [0.0], [(0.0, 1.0)])

    def test_with_observation_appends(self):
        data = gp.Dataset([[0.5]], [1.0], [(0.0, 1.0)])
        grown = data.with_observation([0.25], 2.0)
        assert grown.n == 2
        assert grown.targets[-1] == 2.0


class TestKernelParams:
    def test_rejects_non_positive_lengthscale(self):
        with pytest.raises(ValueError):
            gp.KernelParams(np.array([1.0, 0.0]), 1.0, 0.0)

    def test_rejects_negative_noise(self):
        with pytest.raises(ValueError):
            gp.KernelParams(np.array([1.0]), 1.0, -1e-9)


class TestKernelEval:
    def test_zero_distance_gives_signal_variance(self):
        params = gp.KernelParams(np.array([0.7]), 2.0, 0.0)
        assert gp.kernel_eval([0.3], [0.3], params) == 2.0

    def test_scalar_evaluation(self):
        params = gp.KernelParams(np.array([1.0]), 1.0, 0.0)
        assert gp.kernel_eval([0.0], [1.0], params) == pytest.approx(
            math.exp(-0.5), abs=1e-12
        )

    def test_ard_weighting(self):
        params = gp.KernelParams(np.array([1.0, 2.0]), 1.0, 0.0)
        # (1-0)^2/1 + (2-0)^2/4 = 2 halves -> exp(-1)
        assert gp.kernel_eval([0.0, 0.0], [1.0, 2.0], params) == pytest.approx(
            math.exp(-1.0), abs=1e-12
        )

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        params = gp.KernelParams(rng.uniform(0.5, 2.0, 4), 1.3, 0.0)
        a, b = rng.normal(size=4), rng.normal(size=4)
        assert gp.kernel_eval(a, b, params) == gp.kernel_eval(b, a, params)

    def test_dimension_mismatch(self):
        params = gp.KernelParams(np.array([1.0]), 1.0, 0.0)
        with pytest.raises(ValueError, match="dimension mismatch"):
            gp.kernel_eval([0.0, 1.0], [1.0, 2.0], params)


class TestFitPosterior:
    def test_single_zero_target_gives_zero_alpha(self):
        data = gp.Dataset([[2.0]], [0.0], [(0.0, 10.0)])
        post = gp.fit_posterior(data, gp.KernelParams(np.array([1.0]), 1.0, 0.1))
        np.testing.assert_array_equal(post.alpha, [0.0])

    def test_alpha_matches_dense_solve(self):
        data = gp.Dataset([[1.0], [3.0], [7.0]], [0.4, -1.2, 0.9], [(0.0, 10.0)])
        params = gp.KernelParams(np.array([1.0]), 1.0, 0.1)
        post = gp.fit_posterior(data, params)
        K = gp.kernel_matrix(data.points, data.points, params)
        K += (params.noise_variance + post.jitter) * np.eye(3)
        expected = np.linalg.inv(K) @ post.data.targets
        np.testing.assert_allclose(post.alpha, expected, rtol=1e-8, atol=1e-12)

    def test_duplicate_points_zero_noise_succeed_via_jitter(self):
        data = gp.Dataset([[2.0], [2.0]], [1.0, 1.0], [(0.0, 10.0)])
        post = gp.fit_posterior(data, gp.KernelParams(np.array([1.0]), 1.0, 0.0))
        assert post.jitter > 0

    def test_cholesky_reconstructs_gram(self):
        rng = np.random.default_rng(7)
        data, params, _ = random_fixture(rng)
        post = gp.fit_posterior(data, params)
        gram = gp.kernel_matrix(data.points, data.points, params)
        gram += (params.noise_variance + post.jitter) * np.eye(data.n)
        np.testing.assert_allclose(post.chol @ post.chol.T, gram, rtol=1e-8)


class TestPredict:
    def test_interpolates_at_zero_noise(self):
        data = gp.Dataset([[1.0], [3.0], [7.0]], [0.3, -0.2, 0.9], [(0.0, 10.0)])
        post = gp.fit_posterior(data, gp.KernelParams(np.array([1.0]), 1.0, 0.0))
        mean, var = post.predict(data.points)
        np.testing.assert_allclose(mean, data.targets, atol=1e-6)
        assert np.all(var <= post.jitter * 1.0 * 10)

    def test_reverts_to_prior_far_from_data(self):
        data = gp.Dataset([[1.0], [3.0]], [0.5, 1.5], [(0.0, 1000.0)])
        params = gp.KernelParams(np.array([1.0]), 1.0, 0.1)
        post = gp.fit_posterior(data, params, standardize=False)
        mean, var = post.predict([[900.0]])
        assert abs(mean[0] - 0.0) < 1e-6  # prior mean in raw mode
        assert abs(var[0] - 1.1) < 1e-6

    def test_far_query_mean_reverts_to_standardization_mean(self):
        data = gp.Dataset([[1.0], [3.0]], [2.0, 4.0], [(0.0, 1000.0)])
        post = gp.fit_posterior(data, gp.KernelParams(np.array([1.0]), 1.0, 0.1))
        mean, _ = post.predict([[900.0]])
        assert abs(mean[0] - 3.0) < 1e-6

    def test_midpoint_matches_dense_oracle(self):
        data = gp.Dataset([[1.0], [2.0]], [0.0, 1.0], [(0.0, 10.0)])
        params = gp.KernelParams(np.array([0.8]), 1.2, 0.05)
        post = gp.fit_posterior(data, params, standardize=False)
        mean, var = post.predict([[1.5]])
        e_mean, e_var = dense_posterior(data, params, np.array([[1.5]]), post.jitter)
        np.testing.assert_allclose(mean, e_mean, rtol=1e-8)
        np.testing.assert_allclose(var, e_var, rtol=1e-8)

    def test_dimension_mismatch(self):
        data = gp.Dataset([[1.0]], [0.0], [(0.0, 10.0)])
        post = gp.fit_posterior(data, gp.KernelParams(np.array([1.0]), 1.0, 0.1))
        with pytest.raises(ValueError, match="dimension"):
            post.predict([[1.0, 2.0]])

    def test_matches_dense_oracle_on_random_fixtures(self):
        """Cholesky route == explicit-inverse route on 50 random fixtures."""
        rng = np.random.default_rng(42)
        for _ in range(50):
            data, params, bounds = random_fixture(rng)
            post = gp.fit_posterior(data, params)
            queries = rng.uniform(bounds[:, 0], bounds[:, 1], size=(6, data.dimension))
            mean, var = post.predict_standardized(queries)
            std_data = gp.Dataset(data.points, post.data.targets, bounds)
            e_mean, e_var = dense_posterior(std_data, params, queries, post.jitter)
            np.testing.assert_allclose(mean, e_mean, rtol=1e-8, atol=1e-10)
            np.testing.assert_allclose(var, e_var, rtol=1e-8, atol=1e-10)

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            data, params, bounds = random_fixture(rng)
            post = gp.fit_posterior(data, params)
            queries = rng.uniform(bounds[:, 0], bounds[:, 1], size=(20, data.dimension))
            _, var = post.predict_standardized(queries)
            cap = params.signal_variance + params.noise_variance + post.jitter
            assert np.all(var >= 0)
            assert np.all(var <= cap + 1e-12)

    def test_information_gain_is_monotone(self):
        """Adding an observation never increases variance anywhere."""
        rng = np.random.default_rng(13)
        for _ in range(15):
            data, params, bounds = random_fixture(rng, n=int(rng.integers(2, 10)))
            params = gp.KernelParams(params.lengthscales, params.signal_variance, 0.0)
            queries = rng.uniform(bounds[:, 0], bounds[:, 1], size=(15, data.dimension))
            _, before = gp.fit_posterior(data, params).predict_standardized(queries)
            new_x = rng.uniform(bounds[:, 0], bounds[:, 1])
            grown = data.with_observation(new_x, float(rng.normal()))
            _, after = gp.fit_posterior(grown, params).predict_standardized(queries)
            assert np.all(after <= before + 1e-6)


class TestLogMarginalLikelihood:
    def test_scalar_closed_form(self):
        data = gp.Dataset([[2.0]], [0.5], [(0.0, 10.0)])
        params = gp.KernelParams(np.array([1.0]), 1.0, 0.1)
        got = gp.log_marginal_likelihood(data, params, standardize=False)
        expected = -0.5 * (0.25 / 1.1) - 0.5 * math.log(1.1) - 0.5 * math.log(2 * math.pi)
        assert got == pytest.approx(expected, abs=1e-6)

    def test_matches_dense_oracle(self):
        data = gp.Dataset([[1.0], [3.0], [7.0]], [0.4, -1.2, 0.9], [(0.0, 10.0)])
        params = gp.KernelParams(np.array([1.5]), 0.8, 0.05)
        post = gp.fit_posterior(data, params, standardize=False)
        assert post.log_marginal_likelihood == pytest.approx(
            dense_lml(data, params, post.jitter), abs=1e-8
        )

    def test_zero_targets_leave_only_determinant_terms(self):
        data = gp.Dataset([[1.0], [3.0], [7.0]], [0.0, 0.0, 0.0], [(0.0, 10.0)])
        params = gp.KernelParams(np.array([1.5]), 0.8, 0.05)
        post = gp.fit_posterior(data, params, standardize=False)
        expected = (
            -float(np.sum(np.log(np.diag(post.chol)))) - 1.5 * math.log(2 * math.pi)
        )
        assert post.log_marginal_likelihood == pytest.approx(expected, abs=1e-12)

    def test_cholesky_vs_dense_on_random_fixtures(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            data, params, bounds = random_fixture(rng)
            post = gp.fit_posterior(data, params)
            std_data = gp.Dataset(data.points, post.data.targets, bounds)
            expected = dense_lml(std_data, params, post.jitter)
            assert post.log_marginal_likelihood == pytest.approx(expected, abs=1e-8)


class TestOptimizeHyperparameters:
    def test_single_point_returns_init(self):
        data = gp.Dataset([[2.0]], [0.5], [(0.0, 10.0)])
        init = gp.KernelParams(np.array([1.0]), 1.0, 0.1)
        assert gp.optimize_hyperparameters(data, init) is init

    def test_never_worse_than_init(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            data, init, _ = random_fixture(rng, n=10)
            fitted = gp.optimize_hyperparameters(data, init, restarts=2, rng=rng)
            lml_init = gp.log_marginal_likelihood(data, init)
            lml_fit = gp.log_marginal_likelihood(data, fitted)
            assert lml_fit >= lml_init - 1e-9

    def test_recovers_known_lengthscale(self):
        """Data drawn from a known GP prior: the fitted lengthscale lands
        within a factor of 4 of truth in at least 8 of 10 seeded trials."""
        bounds = np.array([[0.0, 10.0]])
        truth = gp.KernelParams(np.array([1.0]), 1.0, 0.01)
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            X = rng.uniform(0.0, 10.0, size=(30, 1))
            K = gp.kernel_matrix(X, X, truth) + truth.noise_variance * np.eye(30)
            y = np.linalg.cholesky(K + 1e-10 * np.eye(30)) @ rng.normal(size=30)
            data = gp.Dataset(X, y, bounds)
            init = gp.KernelParams(np.array([2.5]), 1.0, 1e-3)
            fitted = gp.optimize_hyperparameters(data, init, rng=rng)
            if 0.25 <= fitted.lengthscales[0] <= 4.0:
                hits += 1
        assert hits >= 8

    def test_beats_coarse_grid_search(self):
        """Simplex result is no worse than a 20^3 log-grid search minus 0.5."""
        rng = np.random.default_rng(17)
        X = rng.uniform(0.0, 10.0, size=(12, 1))
        y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=12)
        data = gp.Dataset(X, y, [(0.0, 10.0)])
        best_grid = -np.inf
        for ls in np.logspace(-1.5, 1.5, 20):
            for sf in np.logspace(-1.5, 1.5, 20):
                for sn in np.logspace(-5, 0, 20):
                    params = gp.KernelParams(np.array([ls]), sf, sn)
                    best_grid = max(best_grid, gp.log_marginal_likelihood(data, params))
        init = gp.KernelParams(np.array([1.0]), 1.0, 0.01)
        fitted = gp.optimize_hyperparameters(data, init, rng=rng)
        assert gp.log_marginal_likelihood(data, fitted) >= best_grid - 0.5


class TestCheckKernelValidity:
    def test_healthy_lengthscale_is_valid(self):
        params = gp.KernelParams(np.array([0.5]), 1.0, 0.0)
        report = gp.check_kernel_validity(params, [(0.0, 15.0)])
        assert report.valid and report.flagged_dimensions == ()

    def test_vanishing_lengthscale_is_flagged(self):
        params = gp.KernelParams(np.array([1e-5]), 1.0, 0.0)
        report = gp.check_kernel_validity(params, [(0.0, 15.0)])
        assert not report.valid
        assert report.flagged_dimensions == (0,)

    def test_mixed_dimensions_flag_only_offenders(self):
        params = gp.KernelParams(np.array([0.5, 1e-6]), 1.0, 0.0)
        report = gp.check_kernel_validity(params, [(0.0, 1.0), (0.0, 1.0)])
        assert not report.valid
        assert report.flagged_dimensions == (1,)
