import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigmaest.models import (
    LinearGaussianModel,
    initial_uncertainty_sweep,
    load_sim,
    save_sim,
    simulate,
    ct_model,
    ungm_model,
    wrap_angle,
)


def _fd(fn, x, eps=1e-6):
    """Central-difference Jacobian of a row-vectorized map at each row of ``x``."""
    N, n = x.shape
    out = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps * (1 + np.abs(x[:, j]).max())
        h = e[j]
        out.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(out, axis=-1)


def _param_fd(fn, theta, eps=1e-6):
    out = []
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = eps * (1 + abs(theta[i]))
        out.append((fn(theta + e) - fn(theta - e)) / (2 * e[i]))
    return np.stack(out)


def _ct_probes(rng, N=50):
    x = rng.normal(size=(N, 5))
    x[:, :2] += [2.0, 0.0]
    x[:, 4] *= 3.0
    x[:5, 4] = rng.normal(scale=1e-3, size=5)  # exercise the series branch
    return x


MODELS = {
    "ungm": lambda: ungm_model(free=("a", "b", "c", "d", "q", "r")),
    "ct": lambda: ct_model(free=("qc", "qw", "r1_std", "r2_std")),
    "linear": lambda: LinearGaussianModel(
        [[0.9, 0.1], [0.0, 0.8]], [[1.0, 0.5]], np.eye(2), [[0.3]], [0.0, 1.0], np.eye(2),
        free=("a", "q", "r", "p0", "bias"), a=0.95, q=0.4, r=2.0, p0=1.5, bias=0.2,
    ),
}


def _probes(name, rng):
    if name == "ct":
        return _ct_probes(rng)
    n = MODELS[name]().n
    return rng.normal(scale=2.0, size=(50, n))


class TestDerivatives:
    @pytest.mark.parametrize("name", list(MODELS))
    def test_state_jacobians(self, name):
        model = MODELS[name]()
        th = model.theta0
        x = _probes(name, np.random.default_rng(0))
        for k in (0, 3):
            np.testing.assert_allclose(model.F_x(x, th, k), _fd(lambda z: model.f(z, th, k), x), rtol=1e-5, atol=1e-7)
            np.testing.assert_allclose(model.H_x(x, th, k), _fd(lambda z: model.h(z, th, k), x), rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("name", list(MODELS))
    def test_parameter_partials(self, name):
        model = MODELS[name]()
        th = model.theta0
        x = _probes(name, np.random.default_rng(1))
        k = 2
        df = model.df_dtheta(x, th, k)
        np.testing.assert_allclose(df, np.moveaxis(_param_fd(lambda t: model.f(x, t, k), th), 0, 1), rtol=1e-5, atol=1e-7)
        dh = model.dh_dtheta(x, th, k)
        np.testing.assert_allclose(dh, np.moveaxis(_param_fd(lambda t: model.h(x, t, k), th), 0, 1), rtol=1e-5, atol=1e-7)
        for fn, dfn in [(model.Q, model.dQ), (model.R, model.dR), (model.m0, model.dm0), (model.P0, model.dP0)]:
            np.testing.assert_allclose(dfn(th), _param_fd(fn, th), rtol=1e-5, atol=1e-9)


class TestUNGM:
    def test_examples(self):
        m = ungm_model(free=("a", "b", "c"))
        th = m.theta0
        assert m.f(np.zeros((1, 1)), th, 0)[0, 0] == pytest.approx(8.0)
        assert m.df_dtheta(np.ones((1, 1)), th, 0)[0, 1, 0] == pytest.approx(0.5)
        assert m.F_x(np.zeros((1, 1)), th, 0)[0, 0, 0] == pytest.approx(25.5)

    def test_defaults(self):
        m = ungm_model()
        p = m.params(m.theta0)
        assert (p["a"], p["b"], p["c"], p["q"], p["r"]) == (0.5, 25.0, 8.0, 10.0, 0.01)
        assert p["d"] == pytest.approx(np.sqrt(0.05))
        np.testing.assert_array_equal(m.m0(m.theta0), [0.0])
        np.testing.assert_array_equal(m.P0(m.theta0), [[0.01]])

    def test_rejects_nonpositive_noise(self):
        with pytest.raises(ValueError):
            ungm_model(q=0.0)
        with pytest.raises(ValueError):
            ungm_model(free=("nope",))

    def test_linear_view_reproduces(self):
        m = ungm_model(free=("a", "b"))
        th = np.array([0.3, 20.0])
        lin = m.linear_view(th)
        x = np.linspace(-5, 5, 11)[:, None]
        np.testing.assert_allclose(lin.f_tilde(x, 4) @ lin.A.T, m.f(x, th, 4), atol=1e-12)
        np.testing.assert_allclose(lin.h_tilde(x, 4) @ lin.H.T, m.h(x, th, 4), atol=1e-12)
        np.testing.assert_allclose(m.theta_from_linear(lin, th), th)


class TestCT:
    def test_examples(self):
        m = ct_model()
        th = m.theta0
        assert m.Q(th)[0, 0] == pytest.approx(0.1 * 1e-6 / 3)
        x = np.array([[0.0, 0.5, 0.0, 0.0, 0.0]])
        assert m.h(x, th, 1)[0, 0] == 0.0
        np.testing.assert_allclose(m.R(th), np.diag([0.05**2, 0.1**2]))
        np.testing.assert_allclose(m.P0(th), np.diag([0.25, 0.25, 0.25, 0.25, 1.0]))
        np.testing.assert_allclose(m.m0(th), [2.0, 0.0, 0.0, 0.0, 0.0])

    def test_zero_turn_limit(self):
        m = ct_model()
        F = m.transition_matrix(0.0)
        assert F[0, 2] == pytest.approx(0.01) and F[0, 3] == 0.0
        np.testing.assert_allclose(m.transition_matrix(1e-12), F, atol=1e-9)

    def test_r_diag_and_validation(self):
        m = ct_model(R_diag=(0.04, 0.09))
        np.testing.assert_allclose(m.R(m.theta0), np.diag([0.04, 0.09]))
        with pytest.raises(ValueError):
            ct_model(R_diag=(0.0, 1.0))
        with pytest.raises(ValueError):
            ct_model(dt=0.0)

    def test_linear_view_reproduces(self):
        m = ct_model()
        lin = m.linear_view(m.theta0)
        x = _ct_probes(np.random.default_rng(2), 10)
        np.testing.assert_allclose(lin.f_tilde(x, 0) @ lin.A.T, m.f(x, m.theta0, 0))
        np.testing.assert_allclose(lin.h_tilde(x, 1) @ lin.H.T, m.h(x, m.theta0, 1))
        np.testing.assert_allclose(m.theta_from_linear(lin, m.theta0), m.theta0)


class TestSweep:
    def test_endpoints(self):
        m = ct_model()
        x0 = np.array([1.7, 0.2, 0.0, 0.0, 0.0])
        same = initial_uncertainty_sweep(m, 0.5, x0)
        np.testing.assert_allclose(same.m0(same.theta0), m.m0(m.theta0))
        np.testing.assert_allclose(same.P0(same.theta0), m.P0(m.theta0))
        tight = initial_uncertainty_sweep(m, 1e-9, x0)
        np.testing.assert_allclose(tight.m0(tight.theta0)[:2], x0[:2], atol=1e-8)
        quarter = initial_uncertainty_sweep(m, 0.25, x0)
        np.testing.assert_allclose(np.diag(quarter.P0(quarter.theta0))[:2], 0.0625)
        np.testing.assert_allclose(m.P0(m.theta0)[0, 0], 0.25)

    @pytest.mark.parametrize("sigma", [0.0, -0.1, 0.6])
    def test_range(self, sigma):
        with pytest.raises(ValueError):
            initial_uncertainty_sweep(ct_model(), sigma, np.zeros(5))


class TestSimulate:
    def test_noiseless_identity(self):
        m = LinearGaussianModel(np.eye(2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)), [1.0, -1.0], np.eye(2))
        sim = simulate(m, m.theta0, 10, seed=3)
        np.testing.assert_array_equal(sim.measurements, np.tile(sim.states[0], (10, 1)))
        assert sim.states.shape == (11, 2) and sim.T == 10

    def test_reproducible(self):
        m = ct_model()
        a = simulate(m, m.theta0, 20, seed=5, trajectory=2)
        b = simulate(m, m.theta0, 20, seed=5, trajectory=2)
        c = simulate(m, m.theta0, 20, seed=5, trajectory=3)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.measurements, b.measurements)
        assert not np.array_equal(a.states, c.states)

    def test_process_noise_covariance(self):
        Q = np.array([[2.0, 0.6], [0.6, 1.0]])
        m = LinearGaussianModel(np.zeros((2, 2)), np.eye(2), Q, np.eye(2), [0.0, 0.0], np.eye(2))
        sim = simulate(m, m.theta0, 100_000, seed=0)
        q = sim.states[1:]
        S = q.T @ q / len(q)
        # var of a sample second moment is (Q_ii Q_jj + Q_ij^2) / N
        se = np.sqrt((np.outer(np.diag(Q), np.diag(Q)) + Q**2) / len(q))
        assert np.all(np.abs(S - Q) < 3 * se)

    def test_empty(self):
        m = ungm_model()
        sim = simulate(m, m.theta0, 0, seed=0)
        assert sim.states.shape == (1, 1) and sim.measurements.shape == (0, 1)
        with pytest.raises(ValueError):
            simulate(m, m.theta0, -1, seed=0)

    def test_save_load_roundtrip(self, tmp_path):
        m = ct_model()
        sim = simulate(m, m.theta0, 7, seed=11, trajectory=4)
        path = tmp_path / "traj.csv"
        save_sim(sim, path, meta={"theta": [0.05]})
        back = load_sim(path)
        np.testing.assert_array_equal(back.states, sim.states)
        np.testing.assert_array_equal(back.measurements, sim.measurements)
        assert (back.seed, back.trajectory) == (11, 4)
        side = json.loads(path.with_suffix(".json").read_text())
        assert side["theta"] == [0.05] and side["T"] == 7


class TestWrap:
    @settings(max_examples=200)
    @given(x=st.floats(-1e4, 1e4), k=st.integers(-50, 50))
    def test_range_and_periodicity(self, x, k):
        w = wrap_angle(x)
        assert -np.pi < w <= np.pi
        assert wrap_angle(x + 2 * np.pi * k) == pytest.approx(w, abs=1e-8) or abs(abs(w) - np.pi) < 1e-8

    def test_values(self):
        np.testing.assert_allclose(wrap_angle([0.0, np.pi, -np.pi, 3 * np.pi / 2]), [0.0, np.pi, np.pi, -np.pi / 2])
