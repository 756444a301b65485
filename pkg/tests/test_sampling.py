"""Sobol stream determinism and balance, probe-set variance averaging, and
acquisition maximization against dense grid oracles."""

import numpy as np
import pytest

from ctxbo import gp
from ctxbo.acquisition import AcquisitionKind, AcquisitionSpec
from ctxbo.sampling import (
    CandidateSet,
    SearchBudget,
    SobolStream,
    maximize_acquisition,
    mean_posterior_variance,
    sobol_points,
)

EI = AcquisitionSpec(AcquisitionKind.EI)
AEI = AcquisitionSpec(AcquisitionKind.AEI)


def simple_model(points, targets, bounds, lengthscale=1.0, noise=1e-4, standardize=True):
    data = gp.Dataset(points, targets, bounds)
    params = gp.KernelParams(
        np.full(data.dimension, lengthscale), 1.0, noise
    )
    return gp.fit_posterior(data, params, standardize=standardize)


class TestSobolStream:
    def test_reference_first_points(self):
        stream = SobolStream(2)
        expected = np.array([[0.5, 0.5], [0.75, 0.25], [0.25, 0.75]])
        np.testing.assert_array_equal(stream.take(3), expected)

    def test_deterministic_across_streams(self):
        a = SobolStream(3).take(64)
        b = SobolStream(3)
        first, rest = b.take(16), b.take(48)
        np.testing.assert_array_equal(a, np.vstack([first, rest]))

    def test_outputs_in_unit_cube(self):
        points = SobolStream(5).take(512)
        assert np.all((points >= 0.0) & (points < 1.0))

    def test_rejects_unsupported_dimension(self):
        with pytest.raises(ValueError, match="dimension"):
            SobolStream(22)

    def test_index_advances(self):
        stream = SobolStream(2)
        stream.take(10)
        assert stream.index == 11  # the all-zeros point was skipped

    def test_dyadic_balance(self):
        """Low-discrepancy counting oracle: the raw first 1024 points fill
        every depth-2 dyadic quadrant with exactly 64 points; the stream's
        skip of the all-zeros origin shifts two cells by one point."""

        def counts(points):
            ix = np.minimum((points[:, 0] * 4).astype(int), 3)
            iy = np.minimum((points[:, 1] * 4).astype(int), 3)
            out = np.zeros((4, 4), dtype=int)
            np.add.at(out, (ix, iy), 1)
            return out

        stream = SobolStream(2)
        skipped = counts(stream.take(1024))
        assert skipped.sum() == 1024
        assert np.all(np.abs(skipped - 64) <= 1)
        raw = counts(np.vstack([[0.0, 0.0], SobolStream(2).take(1023)]))
        np.testing.assert_array_equal(raw, np.full((4, 4), 64))


class TestSobolPoints:
    def test_affine_scaling(self):
        stream = SobolStream(1)
        cs = sobol_points(stream, 1, [(0.0, 10.0)])
        np.testing.assert_array_equal(cs.points, [[5.0]])
        assert cs.source == "sobol"

    def test_all_points_within_bounds(self):
        stream = SobolStream(3)
        bounds = [(-5.0, 10.0), (0.0, 15.0), (-1.0, 1.0)]
        cs = sobol_points(stream, 500, bounds)
        b = np.asarray(bounds)
        assert np.all(cs.points >= b[:, 0]) and np.all(cs.points <= b[:, 1])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            sobol_points(SobolStream(2), 4, [(0.0, 1.0)])


class TestMeanPosteriorVariance:
    def test_interpolated_probe_has_negligible_variance(self):
        model = simple_model([[5.0]], [1.0], [(0.0, 10.0)], noise=0.0)
        probes = CandidateSet(np.array([[5.0], [5.0], [5.0]]))
        assert mean_posterior_variance(model, probes) <= 1e-6

    def test_far_probes_revert_to_prior(self):
        model = simple_model(
            [[0.5]], [1.0], [(0.0, 1000.0)], lengthscale=1.0, noise=0.1
        )
        probes = CandidateSet(np.array([[900.0], [950.0]]))
        assert mean_posterior_variance(model, probes) == pytest.approx(1.1, abs=1e-3)

    def test_equals_hand_average_of_predict(self):
        model = simple_model([[2.0], [6.0]], [0.0, 1.0], [(0.0, 10.0)])
        probes = CandidateSet(np.array([[1.0], [5.0], [9.0]]))
        _, var = model.predict_standardized(probes.points)
        assert mean_posterior_variance(model, probes) == pytest.approx(
            var.mean(), abs=1e-15
        )

    def test_rejects_empty_probe_set(self):
        model = simple_model([[2.0]], [0.0], [(0.0, 10.0)])
        with pytest.raises(ValueError, match="non-empty"):
            mean_posterior_variance(model, np.empty((0, 1)))


class TestMaximizeAcquisition:
    def test_singleton_budget_returns_lone_candidate(self):
        model = simple_model([[2.0], [6.0]], [0.0, 1.0], [(0.0, 10.0)])
        stream = SobolStream(1)
        point, score = maximize_acquisition(
            model, EI, [(0.0, 10.0)], budget=SearchBudget(1, 0), stream=stream
        )
        np.testing.assert_array_equal(point, [5.0])
        assert np.isfinite(score)

    def test_aei_with_zero_uncertainty_matches_ei_argmax(self):
        model = simple_model([[2.0], [6.0], [9.0]], [0.0, 1.0, -0.5], [(0.0, 10.0)])
        cands = sobol_points(SobolStream(1), 256, [(0.0, 10.0)])
        p_aei, _ = maximize_acquisition(
            model, AEI, [(0.0, 10.0)], budget=SearchBudget(256, 0),
            candidates=cands, mean_variance=0.0,
        )
        p_ei, _ = maximize_acquisition(
            model, EI, [(0.0, 10.0)], budget=SearchBudget(256, 0),
            candidates=cands, mean_variance=0.0,
        )
        np.testing.assert_array_equal(p_aei, p_ei)

    def test_matches_dense_grid_oracle(self):
        """Returned score within 1e-3 of a dense 10^5-point grid maximum."""
        rng = np.random.default_rng(12)
        X = rng.uniform(0.0, 10.0, size=(6, 1))
        y = np.sin(X[:, 0])
        model = simple_model(X, y, [(0.0, 10.0)], lengthscale=1.2, noise=1e-3)
        for spec in (EI, AEI, AcquisitionSpec(AcquisitionKind.PI, 0.1)):
            stream = SobolStream(1)
            cands = sobol_points(stream, 512, [(0.0, 10.0)])
            mpv = mean_posterior_variance(model, cands)
            _, score = maximize_acquisition(
                model, spec, [(0.0, 10.0)], budget=SearchBudget(512, 5),
                candidates=cands, mean_variance=mpv,
            )
            grid = np.linspace(0.0, 10.0, 100_001)[:, None]
            mean, var = model.predict_standardized(grid)
            from ctxbo.acquisition import score_arrays

            incumbent = float(model.data.targets.max())
            dense = score_arrays(mean, np.sqrt(var), incumbent, mpv, spec)
            assert score >= dense.max() - 1e-3

    def test_refinement_never_loses_ground(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0.0, 10.0, size=(5, 2))
        y = rng.normal(size=5)
        bounds = [(0.0, 10.0), (0.0, 10.0)]
        model = simple_model(X, y, bounds)
        cands = sobol_points(SobolStream(2), 128, bounds)
        mpv = mean_posterior_variance(model, cands)
        mean, var = model.predict_standardized(cands.points)
        from ctxbo.acquisition import score_arrays

        incumbent = float(model.data.targets.max())
        raw_best = score_arrays(mean, np.sqrt(var), incumbent, mpv, EI).max()
        _, score = maximize_acquisition(
            model, EI, bounds, budget=SearchBudget(128, 3),
            candidates=cands, mean_variance=mpv,
        )
        assert score >= raw_best

    def test_result_respects_bounds(self):
        rng = np.random.default_rng(5)
        bounds = [(-1.0, 2.0), (3.0, 4.0)]
        X = rng.uniform([-1, 3], [2, 4], size=(8, 2))
        model = simple_model(X, rng.normal(size=8), bounds)
        point, _ = maximize_acquisition(
            model, AEI, bounds, budget=SearchBudget(64, 3), stream=SobolStream(2)
        )
        b = np.asarray(bounds)
        assert np.all(point >= b[:, 0]) and np.all(point <= b[:, 1])

    def test_deterministic_given_stream_state(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0.0, 10.0, size=(6, 2))
        y = rng.normal(size=6)
        bounds = [(0.0, 10.0), (0.0, 10.0)]
        model = simple_model(X, y, bounds)
        out = []
        for _ in range(2):
            stream = SobolStream(2)
            out.append(
                maximize_acquisition(model, EI, bounds, budget=SearchBudget(128, 2), stream=stream)
            )
        np.testing.assert_array_equal(out[0][0], out[1][0])
        assert out[0][1] == out[1][1]
