import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encal.core import (MMS_BOUNDS, MMS_NAMES, Ensemble, GaussianSummary,
                        ObservationSet, ParameterVector, clamp_to_bounds,
                        ensemble_mean_cov, mms_parameter_vector)
from encal.errors import DimensionMismatch


def make_ensemble(values, names=("a", "b")):
    return Ensemble(np.asarray(values, dtype=float), names)


class TestEnsembleMeanCov:
    def test_two_point_example(self):
        summary = ensemble_mean_cov(make_ensemble([[0, 0], [2, 2]]))
        np.testing.assert_allclose(summary.mean, [1, 1])
        np.testing.assert_allclose(summary.covariance, [[2, 2], [2, 2]])

    def test_degenerate_ensemble(self):
        v = np.array([3.0, -1.0, 7.0])
        summary = ensemble_mean_cov(Ensemble(np.tile(v, (6, 1)), ("x", "y", "z")))
        np.testing.assert_allclose(summary.mean, v)
        np.testing.assert_allclose(summary.covariance, np.zeros((3, 3)))

    def test_monte_carlo_against_independent_formula(self):
        rng = np.random.default_rng(42)
        mu = np.array([-1.5, 2.0])
        draws = mu + 0.1 * rng.standard_normal((500, 2))
        summary = ensemble_mean_cov(make_ensemble(draws))
        assert np.all(np.abs(summary.mean - mu) < 0.02)
        # independent second implementation: explicit accumulation loop
        mean = sum(row for row in draws) / len(draws)
        acc = np.zeros((2, 2))
        for row in draws:
            dev = row - mean
            acc += np.outer(dev, dev)
        np.testing.assert_allclose(summary.covariance, acc / (len(draws) - 1),
                                   rtol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        values = rng.standard_normal((40, 3))
        base = ensemble_mean_cov(Ensemble(values, ("a", "b", "c")))
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(40)
            other = ensemble_mean_cov(Ensemble(values[perm], ("a", "b", "c")))
            np.testing.assert_allclose(other.mean, base.mean, rtol=1e-12)
            np.testing.assert_allclose(other.covariance, base.covariance,
                                       rtol=1e-10, atol=1e-14)

    def test_covariance_exactly_symmetric(self):
        rng = np.random.default_rng(3)
        summary = ensemble_mean_cov(make_ensemble(rng.standard_normal((9, 2)) * 1e6))
        assert np.array_equal(summary.covariance, summary.covariance.T)

    def test_dimension_mismatch(self):
        a = ParameterVector([0.0], ("a",), ((-1, 1),))
        b = ParameterVector([0.0, 1.0], ("a", "b"), ((-1, 1), (-1, 1)))
        with pytest.raises(DimensionMismatch):
            Ensemble.from_members([a, b])


class TestClamp:
    def test_midpoint_unchanged(self):
        mid = np.array([(lo + hi) / 2 for lo, hi in MMS_BOUNDS])
        result = clamp_to_bounds(mms_parameter_vector(mid))
        assert result.clamped is False
        np.testing.assert_array_equal(result.vector.values, mid)

    def test_projects_low_tau_in(self):
        values = np.array([-0.05, 5.0, 100.0, 120.0, 1.0])
        result = clamp_to_bounds(ParameterVector(values, MMS_NAMES, MMS_BOUNDS))
        assert result.clamped is True
        assert result.vector.values[0] == 0.01

    def test_projects_high_conductivity(self):
        values = np.array([0.1, 5.0, 100.0, 120.0, 7.3])
        result = clamp_to_bounds(ParameterVector(values, MMS_NAMES, MMS_BOUNDS))
        assert result.clamped is True
        assert result.vector.values[-1] == 5.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=5, max_size=5))
    def test_idempotent(self, raw):
        pv = ParameterVector(np.array(raw), MMS_NAMES, MMS_BOUNDS)
        once = clamp_to_bounds(pv)
        twice = clamp_to_bounds(once.vector)
        assert twice.clamped is False
        np.testing.assert_array_equal(once.vector.values, twice.vector.values)


class TestTypes:
    def test_parameter_vector_validation(self):
        with pytest.raises(ValueError):
            ParameterVector([1.0, 2.0], ("a", "a"), ((-1, 1), (-1, 1)))
        with pytest.raises(ValueError):
            ParameterVector([1.0], ("a",), ((2.0, 1.0),))
        with pytest.raises(DimensionMismatch):
            ParameterVector([], (), ())

    def test_mms_bounds_table(self):
        assert MMS_BOUNDS == ((0.01, 0.3), (1.0, 30.0), (65.0, 215.0),
                              (100.0, 150.0), (0.1, 5.0))

    def test_gaussian_summary_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianSummary([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])

    def test_gaussian_summary_rejects_negative_definite(self):
        with pytest.raises(ValueError):
            GaussianSummary([0.0], [[-1.0]])

    def test_observation_set_requires_spd(self):
        with pytest.raises(ValueError):
            ObservationSet([1.0, 2.0], [[1.0, 0.0], [0.0, 0.0]], ("a", "b"))
        obs = ObservationSet([1.0], [[0.25]], ("a",))
        assert obs.p == 1

    def test_ensemble_needs_two_members(self):
        with pytest.raises(ValueError):
            Ensemble(np.zeros((1, 2)), ("a", "b"))


class TestSerialization:
    def test_csv_round_trip(self, tmp_path):
        values = np.random.default_rng(0).standard_normal((5, 2))
        e = Ensemble(values, ("a", "b"), ((-9, 9), (-9, 9)), iteration=3, rng_seed=11)
        path = tmp_path / "ens.csv"
        e.to_csv(path)
        back = Ensemble.from_csv(path, bounds=e.bounds, iteration=3, rng_seed=11)
        np.testing.assert_allclose(back.values, values, rtol=1e-15)
        assert back.names == ("a", "b")

    def test_json_round_trip(self, tmp_path):
        values = np.random.default_rng(1).standard_normal((4, 5))
        e = Ensemble(values, MMS_NAMES, MMS_BOUNDS, iteration=7, rng_seed=5)
        path = tmp_path / "ens.json"
        e.to_json(path)
        back = Ensemble.from_json(path)
        np.testing.assert_array_equal(back.values, values)
        assert back.iteration == 7 and back.rng_seed == 5
        assert back.bounds == MMS_BOUNDS

    def test_observation_set_json(self, tmp_path):
        obs = ObservationSet([1.0, 2.0], np.diag([0.1, 0.2]), ("u", "v"))
        path = tmp_path / "obs.json"
        obs.to_json(path)
        back = ObservationSet.from_json(path)
        np.testing.assert_array_equal(back.y, obs.y)
        np.testing.assert_array_equal(back.R, obs.R)
        assert back.labels == obs.labels
