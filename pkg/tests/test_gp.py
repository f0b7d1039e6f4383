import json

import numpy as np
import pytest

from crowdroad import gp
from crowdroad.errors import InvalidParameterError
from crowdroad.gp import (GPHyperParams, GPModel, fit, kernel,
                          log_marginal_likelihood)

HP = GPHyperParams(signal_std=1.0, lengthscale=1.0, noise_std=0.1)


def sample_gp(rng, s, hp):
    """Draw a function realization from the GP prior (plus jitter)."""
    K = kernel(s, s, hp) - hp.noise_std ** 2 * 0  # latent covariance
    K = K + 1e-10 * np.eye(len(s))
    return np.linalg.cholesky(K) @ rng.standard_normal(len(s))


class TestKernel:
    def test_diagonal_is_signal_variance(self):
        hp = GPHyperParams(signal_std=1.7, lengthscale=2.0, noise_std=0.1)
        assert kernel(3.0, 3.0, hp) == pytest.approx(1.7 ** 2)

    def test_unit_distance_value(self):
        assert kernel(0.0, 1.0, HP) == pytest.approx(np.exp(-0.5))

    def test_long_distance_vanishes(self):
        assert kernel(0.0, 1e6, HP) == 0.0

    def test_symmetric_matrix(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(0, 10, 40)
        K = kernel(s, s, HP)
        np.testing.assert_array_equal(K, K.T)

    def test_gram_matrices_psd(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            hp = GPHyperParams(signal_std=float(rng.uniform(0.1, 3.0)),
                               lengthscale=float(rng.uniform(0.1, 10.0)),
                               noise_std=0.1)
            s = rng.uniform(0, 20, 50)
            K = kernel(s, s, hp)
            assert np.linalg.eigvalsh(K).min() >= -1e-8 * hp.signal_std ** 2

    def test_hyperparams_validated(self):
        with pytest.raises(InvalidParameterError):
            GPHyperParams(signal_std=0.0, lengthscale=1.0, noise_std=0.1)
        with pytest.raises(InvalidParameterError):
            GPHyperParams(signal_std=1.0, lengthscale=-1.0, noise_std=0.1)
        with pytest.raises(InvalidParameterError):
            GPHyperParams(signal_std=1.0, lengthscale=1.0, noise_std=0.1,
                          input_noise_std=0.0)


class TestLogMarginalLikelihoodGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(0, 10, 30)
        y = np.sin(s) + 0.1 * rng.standard_normal(30)
        h = 1e-6
        for _ in range(20):
            hp = GPHyperParams(signal_std=float(rng.uniform(0.3, 2.0)),
                               lengthscale=float(rng.uniform(0.3, 5.0)),
                               noise_std=float(rng.uniform(0.05, 0.5)))
            _, grad = log_marginal_likelihood(hp, s, y, return_grad=True)
            theta = np.log([hp.signal_std, hp.lengthscale, hp.noise_std])
            for j in range(3):
                up, down = theta.copy(), theta.copy()
                up[j] += h
                down[j] -= h
                f_up = log_marginal_likelihood(
                    GPHyperParams(*np.exp(up)), s, y)
                f_down = log_marginal_likelihood(
                    GPHyperParams(*np.exp(down)), s, y)
                fd = (f_up - f_down) / (2 * h)
                assert abs(fd - grad[j]) <= 1e-4 * max(abs(fd), abs(grad[j]), 1e-8)

    def test_noisy_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(0, 10, 25)
        y = np.sin(s)
        slopes = np.cos(s)
        hp = GPHyperParams(signal_std=1.0, lengthscale=1.5, noise_std=0.2,
                           input_noise_std=0.3)
        _, grad = log_marginal_likelihood(hp, s, y, slopes=slopes,
                                          return_grad=True)
        h = 1e-6
        theta = np.log([1.0, 1.5, 0.2, 0.3])
        for j in range(4):
            up, down = theta.copy(), theta.copy()
            up[j] += h
            down[j] -= h
            f_up = log_marginal_likelihood(
                GPHyperParams(*np.exp(up)), s, y, slopes=slopes)
            f_down = log_marginal_likelihood(
                GPHyperParams(*np.exp(down)), s, y, slopes=slopes)
            fd = (f_up - f_down) / (2 * h)
            assert abs(fd - grad[j]) <= 1e-4 * max(abs(fd), abs(grad[j]), 1e-8)


class TestFit:
    def test_recovers_known_hyperparameters(self):
        rng = np.random.default_rng(4)
        truth = GPHyperParams(signal_std=1.0, lengthscale=5.0, noise_std=0.1)
        s = np.sort(rng.uniform(0, 100, 200))
        f = sample_gp(rng, s, truth)
        y = f + truth.noise_std * rng.standard_normal(200)
        model = fit(s, y, restarts=5, seed=0)
        hp = model.hyperparams
        for got, want in ((hp.signal_std, 1.0), (hp.lengthscale, 5.0),
                          (hp.noise_std, 0.1)):
            assert want / 2 <= got <= want * 2
        lml_truth = log_marginal_likelihood(truth, s, y)
        assert model.diagnostics["log_marginal_likelihood"] >= lml_truth - 1e-6

    def test_duplicate_inputs_survive_via_jitter(self):
        s = np.array([1.0, 1.0])
        y = np.array([0.5, 0.5])
        model = fit(s, y, restarts=1, seed=0)
        mean, var = model.predict([1.0, 2.0])
        assert np.all(np.isfinite(mean)) and np.all(np.isfinite(var))

    def test_requires_two_points(self):
        with pytest.raises(InvalidParameterError):
            fit(np.array([1.0]), np.array([1.0]))

    def test_nigp_recovers_input_noise(self):
        # targets sampled at true positions, inputs jittered by 0.2:
        # recovered input noise lands near the truth (measured 0.190)
        rng = np.random.default_rng(7)
        truth = GPHyperParams(signal_std=0.02, lengthscale=1.0, noise_std=0.002)
        base = np.linspace(0, 40, 151)
        f = sample_gp(rng, base, truth)
        S, W = [], []
        for _ in range(5):
            S.append(base + rng.normal(0, 0.2, base.size))
            W.append(f + rng.normal(0, truth.noise_std, base.size))
        model = fit(np.concatenate(S), np.concatenate(W), mode="nigp",
                    restarts=3, seed=1)
        assert 0.1 <= model.hyperparams.input_noise_std <= 0.3

    def test_non_convergence_sets_warning_flag(self):
        rng = np.random.default_rng(16)
        s = rng.uniform(0, 10, 40)
        y = np.sin(s) + 0.05 * rng.standard_normal(40)
        model = fit(s, y, restarts=0, seed=0, max_iter=1)
        assert model.diagnostics["warning"] == "optimizer stopped before convergence"
        assert model.diagnostics["converged"] is False

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(8)
        s = rng.uniform(0, 10, 60)
        y = np.sin(s) + 0.05 * rng.standard_normal(60)
        a = fit(s, y, restarts=3, seed=123)
        b = fit(s, y, restarts=3, seed=123)
        assert a.hyperparams == b.hyperparams


class TestPredict:
    def test_prior_prediction(self):
        model = GPModel.prior(HP)
        mean, var = model.predict([0.0, 5.0, -3.0])
        np.testing.assert_array_equal(mean, 0.0)
        np.testing.assert_array_equal(var, 1.0)

    def test_interpolates_training_points_at_low_noise(self):
        rng = np.random.default_rng(9)
        s = np.linspace(0, 10, 15)
        y = np.sin(s)
        hp = GPHyperParams(signal_std=1.0, lengthscale=2.0, noise_std=1e-6)
        model = GPModel(gp.STANDARD, hp, s, y)
        mean, _ = model.predict(s)
        np.testing.assert_allclose(mean, y, atol=1e-4)

    def test_single_point_closed_form(self):
        hp = GPHyperParams(signal_std=1.3, lengthscale=2.0, noise_std=0.4)
        s0, w0 = 1.0, 0.7
        model = GPModel(gp.STANDARD, hp, [s0], [w0])
        q = 2.5
        mean, _ = model.predict(q)
        expected = kernel(q, s0, hp) * w0 / (1.3 ** 2 + 0.4 ** 2)
        np.testing.assert_allclose(mean[0], expected, rtol=1e-12)

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(10)
        s = rng.uniform(0, 10, 50)
        y = rng.standard_normal(50)
        model = GPModel(gp.STANDARD, HP, s, y)
        _, var = model.predict(rng.uniform(-5, 15, 200))
        assert var.max() <= HP.signal_std ** 2 + 1e-10

    def test_adding_data_never_raises_variance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            hp = GPHyperParams(signal_std=float(rng.uniform(0.5, 2.0)),
                               lengthscale=float(rng.uniform(0.5, 3.0)),
                               noise_std=float(rng.uniform(0.05, 0.5)))
            s = rng.uniform(0, 10, 12)
            y = rng.standard_normal(12)
            small = GPModel(gp.STANDARD, hp, s[:-1], y[:-1])
            full = GPModel(gp.STANDARD, hp, s, y)
            q = rng.uniform(0, 10, 5)
            _, v_small = small.predict(q)
            _, v_full = full.predict(q)
            assert np.all(v_full <= v_small + 1e-10)

    def test_nigp_with_vanishing_input_noise_matches_standard(self):
        rng = np.random.default_rng(12)
        s = rng.uniform(0, 10, 40)
        y = np.sin(s) + 0.05 * rng.standard_normal(40)
        hp_std = GPHyperParams(signal_std=1.0, lengthscale=1.5, noise_std=0.1)
        hp_nigp = GPHyperParams(signal_std=1.0, lengthscale=1.5,
                                noise_std=0.1, input_noise_std=1e-12)
        standard = GPModel(gp.STANDARD, hp_std, s, y)
        noisy = GPModel(gp.NOISY_INPUT, hp_nigp, s, y,
                        slopes=standard.posterior_mean_slope(s))
        q = rng.uniform(0, 10, 30)
        m_std, v_std = standard.predict(q)
        m_nigp, v_nigp = noisy.predict(q)
        np.testing.assert_allclose(m_nigp, m_std, atol=1e-10)
        np.testing.assert_allclose(v_nigp, v_std, atol=1e-10)


class TestPosteriorMeanSlope:
    def test_antisymmetric_two_point_case(self):
        hp = GPHyperParams(signal_std=1.0, lengthscale=1.0, noise_std=0.1)
        model = GPModel(gp.STANDARD, hp, [-1.0, 1.0], [0.5, -0.5])
        mean, _ = model.predict(0.0)
        slope = model.posterior_mean_slope(0.0)
        assert abs(mean[0]) < 1e-12
        assert slope[0] < 0

    def test_matches_central_finite_difference(self):
        rng = np.random.default_rng(13)
        s = rng.uniform(0, 10, 60)
        y = np.sin(s) + 0.05 * rng.standard_normal(60)
        model = fit(s, y, restarts=2, seed=0)
        h = 1e-5 * model.hyperparams.lengthscale
        q = rng.uniform(0.5, 9.5, 50)
        slope = model.posterior_mean_slope(q)
        fd = (model.predict(q + h)[0] - model.predict(q - h)[0]) / (2 * h)
        np.testing.assert_allclose(slope, fd, rtol=1e-4, atol=1e-10)

    def test_constant_targets_give_flat_mean(self):
        c = 2.0
        hp = GPHyperParams(signal_std=1.0, lengthscale=1.0, noise_std=1e-8)
        s = np.linspace(0, 10, 30)
        model = GPModel(gp.STANDARD, hp, s, np.full(30, c))
        slope = model.posterior_mean_slope(np.linspace(2, 8, 20))
        assert np.max(np.abs(slope)) <= 1e-6 * c / hp.lengthscale


class TestSerialization:
    def test_round_trip_reproduces_predictions_exactly(self, tmp_path):
        rng = np.random.default_rng(14)
        s = rng.uniform(0, 40, 80)
        y = 0.01 * rng.standard_normal(80)
        model = fit(s, y, mode="nigp", restarts=2, seed=5)
        path = tmp_path / "model.json"
        model.to_json(path)
        back = GPModel.from_json(path)
        q = rng.uniform(0, 40, 100)
        m0, v0 = model.predict(q)
        m1, v1 = back.predict(q)
        np.testing.assert_array_equal(m0, m1)
        np.testing.assert_array_equal(v0, v1)
        assert back.mode == gp.NOISY_INPUT
        assert json.loads(path.read_text())["version"] == "gpmodel/1"

    def test_unsupported_version_rejected(self):
        with pytest.raises(InvalidParameterError):
            GPModel.from_json_dict({"version": "gpmodel/999"})

    def test_refactorization_is_consistent(self):
        rng = np.random.default_rng(15)
        s = rng.uniform(0, 10, 50)
        y = np.sin(s)
        model = fit(s, y, restarts=1, seed=0)
        rebuilt = GPModel(model.mode, model.hyperparams, model.train_inputs,
                          model.train_targets)
        q = rng.uniform(0, 10, 40)
        np.testing.assert_allclose(model.predict(q)[0], rebuilt.predict(q)[0],
                                   atol=1e-12)
