import json

import numpy as np
import pytest

from encal.design import lhs_sample
from encal.errors import DegenerateTargetsWarning, DimensionMismatch
from encal.gp import (CallableBank, EmulatorBank, EmulatorModel, _gls_lml_grad,
                      fit, fit_bank, load_bank, log_marginal_likelihood, predict,
                      predict_bank, r2_score, save_bank)
from encal.models.toy import TOY_X, toy_forward


def toy_training(n, seed=123):
    X = lhs_sample(n, ((-5.0, 5.0), (-5.0, 5.0)), seed, maximin_restarts=50).points
    return X, toy_forward(X)


@pytest.fixture(scope="module")
def toy_model_50():
    X, Y = toy_training(50)
    return fit(X, Y[:, 0], restarts=5, seed=0), X, Y[:, 0]


def plain_model(X, y, log_ls, log_sf2, log_sn2, beta=None):
    """Model with identity standardization and explicit hyperparameters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    return EmulatorModel(
        X_train=X, y_train=np.asarray(y, dtype=float),
        x_mean=np.zeros(d), x_std=np.ones(d), y_mean=0.0, y_scale=1.0,
        log_lengthscales=np.full(d, log_ls), log_signal_var=log_sf2,
        log_noise_var=log_sn2,
        mean_coeffs=np.zeros(d + 1) if beta is None else np.asarray(beta, float),
    )


class TestFit:
    def test_linear_targets_reproduced_exactly(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-2, 2, size=(20, 3))
        y = 2.0 + X @ np.array([3.0, -1.0, 0.5])
        model = fit(X, y, restarts=3, seed=1)
        mean, _ = model.predict_batch(X)
        np.testing.assert_allclose(mean, y, atol=1e-6)

    def test_toy_heldout_r2_above_95(self):
        X, Y = toy_training(50)
        rng = np.random.default_rng(9)
        X_test = rng.uniform(-5, 5, size=(200, 2))
        y_test = toy_forward(X_test)[:, 0]
        model = fit(X, Y[:, 0], restarts=5, seed=2)
        mean, _ = model.predict_batch(X_test)
        assert r2_score(y_test, mean) > 0.95

    def test_two_point_interpolation(self):
        model = fit(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), restarts=3, seed=3)
        mean, _ = model.predict_batch(np.array([[0.5]]))
        assert mean[0] == pytest.approx(0.5, abs=1e-6)

    def test_refit_reproduces_likelihood(self):
        X, Y = toy_training(15)
        model = fit(X, Y[:, 1], restarts=4, seed=4)
        cached = log_marginal_likelihood(model)
        recomputed = log_marginal_likelihood(model, X, Y[:, 1])
        assert recomputed == pytest.approx(cached, rel=1e-8)

    def test_bit_reproducible(self):
        X, Y = toy_training(12)
        a = fit(X, Y[:, 0], restarts=5, seed=7)
        b = fit(X, Y[:, 0], restarts=5, seed=7)
        assert np.array_equal(a.log_lengthscales, b.log_lengthscales)
        assert a.log_signal_var == b.log_signal_var
        assert a.log_noise_var == b.log_noise_var
        assert np.array_equal(a.mean_coeffs, b.mean_coeffs)

    def test_constant_targets_warn_and_floor(self):
        X = np.linspace(0, 1, 8)[:, None]
        with pytest.warns(DegenerateTargetsWarning):
            model = fit(X, np.full(8, 3.25), restarts=2, seed=0)
        assert model.signal_var <= 1e-3
        mean, _ = model.predict_batch(np.array([[0.4]]))
        assert mean[0] == pytest.approx(3.25, abs=1e-6)

    def test_restart_validation(self):
        with pytest.raises(ValueError):
            fit(np.zeros((3, 1)), np.zeros(3), restarts=0)


class TestPredict:
    def test_interpolates_training_point_at_tiny_jitter(self, toy_model_50):
        fitted, X, y = toy_model_50
        model = EmulatorModel(
            X_train=X, y_train=y, x_mean=fitted.x_mean, x_std=fitted.x_std,
            y_mean=fitted.y_mean, y_scale=fitted.y_scale,
            log_lengthscales=fitted.log_lengthscales,
            log_signal_var=fitted.log_signal_var,
            log_noise_var=np.log(1e-10), mean_coeffs=fitted.mean_coeffs)
        mean, var = model.predict_batch(X[:5])
        np.testing.assert_allclose(mean, y[:5] / fitted.y_scale * fitted.y_scale,
                                   atol=1e-6 * fitted.y_scale)
        assert np.all(var / fitted.y_scale**2 <= 1e-8)

    def test_far_field_variance_recovers_prior(self, toy_model_50):
        model, X, y = toy_model_50
        far = model.x_mean + model.x_std * 1e4
        _, var = model.predict_batch(far[None, :])
        assert var[0] == pytest.approx(model.signal_var_output, rel=0.01)

    def test_variance_bounds_everywhere(self, toy_model_50):
        model, X, y = toy_model_50
        rng = np.random.default_rng(11)
        pts = rng.uniform(-8, 8, size=(300, 2))
        _, var = model.predict_batch(pts)
        assert np.all(var >= 0.0)
        upper = model.signal_var_output + model.noise_var * model.y_scale**2
        assert np.all(var <= upper + 1e-10)

    def test_three_sigma_band_covers_truth_with_coarse_emulator(self):
        X, Y = toy_training(10)
        truth = np.array([-1.5, 2.0])
        for j, x in enumerate(TOY_X):
            model = fit(X, Y[:, j], restarts=5, seed=20 + j)
            mean, var = predict(model, truth)
            y_true = toy_forward(truth)[j]
            assert abs(mean - y_true) <= 3.0 * np.sqrt(var) + 1e-9

    def test_dimension_mismatch(self, toy_model_50):
        model, _, _ = toy_model_50
        with pytest.raises(DimensionMismatch):
            model.predict_batch(np.zeros((2, 3)))

    def test_nested_conditioning_never_increases_variance(self, toy_model_50):
        fitted, X, y = toy_model_50
        rng = np.random.default_rng(13)
        pts = rng.uniform(-5, 5, size=(50, 2))
        variances = []
        for m in (10, 15, 50):
            model = EmulatorModel(
                X_train=X[:m], y_train=y[:m], x_mean=fitted.x_mean,
                x_std=fitted.x_std, y_mean=fitted.y_mean, y_scale=fitted.y_scale,
                log_lengthscales=fitted.log_lengthscales,
                log_signal_var=fitted.log_signal_var,
                log_noise_var=fitted.log_noise_var,
                mean_coeffs=fitted.mean_coeffs)
            variances.append(model.predict_batch(pts)[1])
        assert np.all(variances[1] <= variances[0] + 1e-8)
        assert np.all(variances[2] <= variances[1] + 1e-8)


class TestLogMarginalLikelihood:
    def test_single_point_closed_form(self):
        sf2, sn2 = 1.7, 0.3
        model = plain_model([[0.0]], [0.9], np.log(1.0), np.log(sf2), np.log(sn2))
        got = log_marginal_likelihood(model, [[0.0]], [0.9])
        s = sf2 + sn2
        expected = -0.5 * (0.9**2 / s + np.log(2 * np.pi * s))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(17)
        X = rng.uniform(-1, 1, (12, 2))
        y = rng.standard_normal(12)
        model = fit(X, y, restarts=2, seed=1)
        perm = rng.permutation(12)
        a = log_marginal_likelihood(model, X, y)
        b = log_marginal_likelihood(model, X[perm], y[perm])
        assert a == pytest.approx(b, rel=1e-10)

    def test_gradient_matches_central_differences(self):
        X, Y = toy_training(10)
        y = Y[:, 0]
        x_mean, x_std = X.mean(0), X.std(0)
        Xs = (X - x_mean) / x_std
        ys = (y - y.mean()) / y.std()
        F = np.column_stack([np.ones(10), Xs])
        sq = [np.subtract.outer(Xs[:, j], Xs[:, j]) ** 2 for j in range(2)]
        phi = np.array([0.3, -0.2, 0.1, np.log(1e-4)])

        def profiled_lml(p):
            ls = np.exp(p[:2])
            scaled = sum(s / l**2 for s, l in zip(sq, ls))
            K_rbf = np.exp(p[2]) * np.exp(-0.5 * scaled)
            lml, _, _ = _gls_lml_grad(ys, F, K_rbf, np.exp(p[3]), sq, ls)
            return lml

        ls = np.exp(phi[:2])
        scaled = sum(s / l**2 for s, l in zip(sq, ls))
        K_rbf = np.exp(phi[2]) * np.exp(-0.5 * scaled)
        _, grad, _ = _gls_lml_grad(ys, F, K_rbf, np.exp(phi[3]), sq, ls)

        for j in range(2):  # log-lengthscale components
            step = np.zeros(4)
            step[j] = 1e-5
            fd = (profiled_lml(phi + step) - profiled_lml(phi - step)) / 2e-5
            assert grad[j] == pytest.approx(fd, rel=1e-4)


class TestBank:
    @pytest.fixture(scope="class")
    def toy_bank(self):
        X, Y = toy_training(25)
        return fit_bank(X, Y, [f"x={x:g}" for x in TOY_X], restarts=3, seed=5)

    def test_single_member_matches_stacked_predicts(self, toy_bank):
        theta = np.array([[0.5, -1.0]])
        means, variances = predict_bank(toy_bank, theta)
        for i, em in enumerate(toy_bank.emulators):
            m, v = predict(em, theta[0])
            assert means[i, 0] == pytest.approx(m, rel=1e-12)
            assert variances[i, 0] == pytest.approx(v, rel=1e-12)

    def test_single_emulator_bank(self, toy_bank):
        sub = toy_bank.select([toy_bank.labels[0]])
        theta = np.random.default_rng(2).uniform(-3, 3, (7, 2))
        means, variances = predict_bank(sub, theta)
        assert means.shape == variances.shape == (1, 7)

    def test_batch_equals_per_point_loop(self, toy_bank):
        rng = np.random.default_rng(31)
        thetas = rng.standard_normal((500, 2))
        means, variances = predict_bank(toy_bank, thetas)
        idx = rng.integers(0, 500, size=25)
        for n in idx:
            m1, v1 = toy_bank.predict_matrix(thetas[n][None, :])
            np.testing.assert_allclose(means[:, n], m1[:, 0], rtol=1e-12)
            np.testing.assert_allclose(variances[:, n], v1[:, 0], rtol=1e-12, atol=1e-300)

    def test_serialization_round_trip(self, toy_bank, tmp_path):
        path = tmp_path / "bank.json"
        save_bank(toy_bank, path)
        back = load_bank(path)
        theta = np.random.default_rng(4).uniform(-4, 4, (20, 2))
        m0, v0 = predict_bank(toy_bank, theta)
        m1, v1 = predict_bank(back, theta)
        np.testing.assert_allclose(m1, m0, rtol=1e-12)
        np.testing.assert_allclose(v1, v0, rtol=1e-12, atol=1e-300)
        assert json.loads(path.read_text())["schema_version"] == 1

    def test_label_mismatch_rejected(self, toy_bank):
        with pytest.raises(KeyError):
            toy_bank.select(["nonexistent"])

    def test_callable_bank_zero_variance(self):
        bank = CallableBank(toy_forward, [f"x={x:g}" for x in TOY_X])
        theta = np.array([[1.0, 1.0], [-1.5, 2.0]])
        means, variances = bank.predict_matrix(theta)
        np.testing.assert_allclose(means.T, toy_forward(theta), rtol=1e-15)
        assert np.all(variances == 0.0)
