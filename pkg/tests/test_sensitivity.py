import numpy as np
import pytest

import oracles
from sigmaest.cubature import build_rule
from sigmaest.estimate import (
    chol_derivative,
    finite_difference_gradient,
    log_likelihood,
    loglik_gradient_fisher,
    loglik_gradient_sensitivity,
    resolve_rule,
)
from sigmaest.gauss import filter_pass
from sigmaest.models import LinearGaussianModel, ct_model, simulate, ungm_model


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-8)))


def _fd(model, th, y, rule):
    return finite_difference_gradient(lambda t: log_likelihood(model, t, y, rule), th, 1e-5)


def _linear(seed=0, T=30, free=("a", "q", "r", "p0", "bias"), **values):
    A, H, Q, R, m0, P0, y = oracles.random_linear_system(seed, 3, 2, T)
    return LinearGaussianModel(A, H, Q, R, m0, P0, free=free, **values), (A, H, Q, R, m0, P0), y


class TestChol:
    def test_against_finite_differences(self):
        rng = np.random.default_rng(0)
        B = rng.normal(size=(4, 4))
        P = B @ B.T + np.eye(4)
        D = rng.normal(size=(4, 4))
        D = D + D.T
        h = 1e-6
        fd = (np.linalg.cholesky(P + h * D) - np.linalg.cholesky(P - h * D)) / (2 * h)
        np.testing.assert_allclose(chol_derivative(np.linalg.cholesky(P), D), fd, atol=1e-7)

    def test_batched_and_zero(self):
        L = np.linalg.cholesky(np.array([[2.0, 0.3], [0.3, 1.0]]))
        D = np.stack([np.eye(2), np.zeros((2, 2))])
        out = chol_derivative(L, D)
        np.testing.assert_allclose(out[0], chol_derivative(L, np.eye(2)))
        np.testing.assert_array_equal(out[1], 0.0)
        assert np.all(np.triu(out[0], 1) == 0)


class TestSensitivityGradient:
    def test_linear_variance_vs_analytic(self):
        model, (A, H, Q, R, m0, P0), y = _linear(free=("q",), q=1.3)

        def ll(q):
            return oracles.kalman(A, H, q * Q, R, m0, P0, y)[4]

        g = loglik_gradient_sensitivity(model, [1.3], y, "sym3")
        assert _rel(g[0], oracles.richardson_derivative(ll, 1.3)) < 1e-6

    @pytest.mark.parametrize("spec", ["sym3", "sym5", "gh(3)", "ut(0.5,2,0)"])
    def test_linear_all_parameters(self, spec):
        model, _, y = _linear(1, a=0.97, q=0.8, r=1.4, p0=2.0, bias=0.1)
        th = model.theta0
        assert _rel(loglik_gradient_sensitivity(model, th, y, spec), _fd(model, th, y, spec)) < 1e-4

    @pytest.mark.parametrize("spec", ["sym3", "sym5", "sym7", "gh(5)"])
    def test_ungm(self, spec):
        model = ungm_model(free=("a", "b", "c", "d", "q", "r"))
        y = simulate(model, model.theta0, 40, seed=0).measurements
        rng = np.random.default_rng(0)
        for _ in range(3):
            th = model.theta0 * rng.uniform(0.9, 1.1, size=model.m)
            assert _rel(loglik_gradient_sensitivity(model, th, y, spec), _fd(model, th, y, spec)) < 1e-4

    @pytest.mark.parametrize("spec", ["sym3", "sym5"])
    def test_ct(self, spec):
        model = ct_model(free=("r1_std", "r2_std", "qc", "qw"))
        y = simulate(model, model.theta0, 30, seed=1).measurements
        th = np.array([0.04, 0.12, 0.15, 0.08])
        assert _rel(loglik_gradient_sensitivity(model, th, y, spec), _fd(model, th, y, spec)) < 1e-4

    def test_loglik_bitwise_equal_to_filter(self):
        model = ungm_model(free=("a", "b"))
        y = simulate(model, model.theta0, 20, seed=2).measurements
        rule = build_rule("sym5", 1)
        ll, _ = loglik_gradient_sensitivity(model, model.theta0, y, rule, return_loglik=True)
        assert ll == filter_pass(model, model.theta0, y, rule).loglik

    def test_empty_data(self):
        model = ungm_model(free=("a", "q"))
        g = loglik_gradient_sensitivity(model, model.theta0, np.zeros((0, 1)), "sym3")
        np.testing.assert_array_equal(g, 0.0)
        assert log_likelihood(model, model.theta0, np.zeros((0, 1)), "sym3") == 0.0


class TestFisherGradient:
    @pytest.mark.parametrize("spec", ["sym3", "sym5"])
    def test_equals_sensitivity_on_linear(self, spec):
        model, _, y = _linear(2, a=0.9, q=1.2, r=0.7, p0=1.5, bias=-0.2)
        th = model.theta0
        np.testing.assert_allclose(
            loglik_gradient_fisher(model, th, y, spec),
            loglik_gradient_sensitivity(model, th, y, spec),
            rtol=1e-6,
            atol=1e-6,
        )

    def test_zero_data(self):
        model = ungm_model(free=("a", "b"))
        np.testing.assert_array_equal(loglik_gradient_fisher(model, model.theta0, np.zeros((0, 1)), "sym3"), 0.0)

    def test_rejects_ekf(self):
        model = ungm_model()
        with pytest.raises(ValueError):
            loglik_gradient_fisher(model, model.theta0, np.zeros((3, 1)), "ekf")


class TestResolveRule:
    def test_forms(self):
        assert resolve_rule("EKF", 3) == "ekf"
        r = build_rule("sym5", 2)
        assert resolve_rule(r, 2) is r
        with pytest.raises(ValueError):
            resolve_rule(r, 3)

    def test_ekf_likelihood_equals_kalman(self):
        model, mats, y = _linear(3)
        assert log_likelihood(model, model.theta0, y, "ekf") == pytest.approx(
            oracles.kalman(*mats, y)[4], abs=1e-9
        )
