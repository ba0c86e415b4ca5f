"""Comparison baselines: extended Kalman filter/smoother and a particle filter."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from . import kernels
from .gauss import (
    FilterResult,
    FilterStep,
    GaussState,
    SmootherResult,
    SmootherStep,
    cholesky_jitter,
    gaussian_loglik,
    symmetrize,
)
from .models import psd_sqrt

__all__ = [
    "ekf_filter_pass",
    "ekf_rts_pass",
    "ParticleSet",
    "PFResult",
    "WeightCollapse",
    "particle_filter",
    "pf_loglik",
    "effective_sample_size",
]


def ekf_filter_pass(model, theta, y) -> FilterResult:
    """First-order linearized filter with the same record layout as the sigma-point filter."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(y), -1) if len(y) else np.zeros((0, model.d))
    Q, R = model.Q(theta), model.R(theta)
    state = GaussState(np.asarray(model.m0(theta), float), np.asarray(model.P0(theta), float))
    initial = state
    steps = []
    total = 0.0
    for k in range(1, len(y) + 1):
        x = state.mean[None, :]
        F = model.F_x(x, theta, k - 1)[0]
        m_p = model.f(x, theta, k - 1)[0]
        P_p = symmetrize(F @ state.cov @ F.T + Q)
        xp = m_p[None, :]
        Hx = model.H_x(xp, theta, k)[0]
        mu = model.h(xp, theta, k)[0]
        S = symmetrize(Hx @ P_p @ Hx.T + R)
        C = P_p @ Hx.T
        LS = cholesky_jitter(S, k)
        K = cho_solve((LS, True), C.T).T
        v = model.residual(y[k - 1] - mu)
        post = GaussState(m_p + K @ v, symmetrize(P_p - K @ S @ K.T))
        ll = gaussian_loglik(v, LS)
        steps.append(FilterStep(GaussState(m_p, P_p), post, mu, S, C, K, v, ll))
        total += ll
        state = post
    return FilterResult(initial, steps, total, n_evals=2 * len(y))


def ekf_rts_pass(filt: FilterResult, model, theta) -> SmootherResult:
    """Rauch-Tung-Striebel pass linearized at the filtered means."""
    theta = np.asarray(theta, dtype=float)
    T = len(filt)
    Q = model.Q(theta)
    last = filt.state(T)
    out = [None] * (T + 1)
    out[T] = SmootherStep(GaussState(last.mean, last.cov))
    for k in range(T - 1, -1, -1):
        fs = filt.state(k)
        x = fs.mean[None, :]
        F = model.F_x(x, theta, k)[0]
        m_p = model.f(x, theta, k)[0]
        P_p = symmetrize(F @ fs.cov @ F.T + Q)
        D = fs.cov @ F.T
        Lp = cholesky_jitter(P_p, k + 1)
        G = cho_solve((Lp, True), D.T).T
        nxt = out[k + 1].smoothed
        m = fs.mean + G @ (nxt.mean - m_p)
        P = symmetrize(fs.cov + G @ (nxt.cov - P_p) @ G.T)
        out[k] = SmootherStep(GaussState(m, P), G, GaussState(m_p, P_p), D)
    return SmootherResult(out, n_evals=T)


# -- particle filter --------------------------------------------------------------


class WeightCollapse(FloatingPointError):
    """Every particle received zero likelihood."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"step {step}: all particle weights are zero")


@dataclass
class ParticleSet:
    particles: np.ndarray  # (N, n)
    log_weights: np.ndarray  # normalized
    loglik: float

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def ess(self) -> float:
        return effective_sample_size(self.log_weights)


@dataclass
class PFResult:
    final: ParticleSet
    loglik: float
    increments: np.ndarray
    n_resamples: int


def effective_sample_size(log_weights) -> float:
    w = np.exp(log_weights - logsumexp(log_weights))
    return float(1.0 / np.sum(w * w))


def _rng(seed: int, role: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), role])))


def _logpdf_rows(E, L):
    """``log N(e_i | 0, L L^T)`` for every row of ``E``."""
    Z = np.linalg.solve(L, E.T)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (E.shape[1] * np.log(2.0 * np.pi) + logdet + np.sum(Z * Z, axis=0))


def particle_filter(
    model, theta, y, n_particles: int, seed: int, proposal: str = "bootstrap", resample_threshold: float = 0.5
) -> PFResult:
    """Sequential importance resampling with systematic resampling.

    Resampling happens before propagation whenever the effective sample
    size drops below ``resample_threshold * N``. The ``"optimal"``
    proposal samples from ``p(x_k | x_{k-1}, y_k)``, available when the
    measurement function is affine.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if proposal not in ("bootstrap", "optimal"):
        raise ValueError(f"unknown proposal {proposal!r}")
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(y), -1) if len(y) else np.zeros((0, model.d))
    N = n_particles
    Q, R = model.Q(theta), model.R(theta)
    LQ = psd_sqrt(Q)
    g_init, g_prop, g_res = _rng(seed, 0), _rng(seed, 1), _rng(seed, 2)
    x = model.m0(theta) + g_init.standard_normal((N, model.n)) @ psd_sqrt(model.P0(theta)).T
    logw = np.full(N, -np.log(N))
    incs = np.zeros(len(y))
    n_res = 0
    LR = cholesky_jitter(R)
    for k in range(1, len(y) + 1):
        if effective_sample_size(logw) < resample_threshold * N:
            w = np.exp(logw - logsumexp(logw))
            idx = kernels.systematic_resample(w, g_res.random())
            x = x[idx]
            logw = np.full(N, -np.log(N))
            n_res += 1
        mean = model.f(x, theta, k - 1)
        z = g_prop.standard_normal((N, model.n))
        if proposal == "optimal":
            aff = model.affine_measurement(theta, k)
            if aff is None:
                raise ValueError("the optimal proposal needs an affine measurement function")
            H, b = aff
            S = symmetrize(H @ Q @ H.T + R)
            LS = cholesky_jitter(S, k)
            K = cho_solve((LS, True), (Q @ H.T).T).T
            E = model.residual(y[k - 1] - mean @ H.T - b)
            inc = _logpdf_rows(E, LS)
            x = mean + E @ K.T + z @ psd_sqrt(symmetrize(Q - K @ S @ K.T)).T
        else:
            x = mean + z @ LQ.T
            E = model.residual(y[k - 1] - model.h(x, theta, k))
            inc = _logpdf_rows(E, LR)
        if not np.any(np.isfinite(inc)):
            raise WeightCollapse(k)
        total = logsumexp(logw + inc)
        incs[k - 1] = total
        logw = logw + inc - total
    return PFResult(ParticleSet(x, logw, float(incs.sum())), float(incs.sum()), incs, n_res)


def pf_loglik(model, theta, y, n_particles: int, seed: int, proposal: str = "bootstrap") -> float:
    """Particle-filter estimate of the log-likelihood."""
    return particle_filter(model, theta, y, n_particles, seed, proposal).loglik
