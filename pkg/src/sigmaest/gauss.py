"""Assumed-density Gaussian filtering and Rauch-Tung-Striebel smoothing.

Every Gaussian expectation is replaced by a sigma-point sum from a
:class:`~sigmaest.cubature.CubatureRule`. Means use the rule's mean
weights and all outer-product sums use its covariance weights.

Time indexing: ``model.f(x, theta, k)`` maps ``x_k`` to the mean of
``x_{k+1}``, so predicting ``x_k`` evaluates ``f(., theta, k - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import kernels
from .cubature import CubatureRule, sigma_points

__all__ = [
    "GaussState",
    "FilterStep",
    "FilterResult",
    "SmootherStep",
    "SmootherResult",
    "PairwiseJoint",
    "NumericalBreakdown",
    "cholesky_jitter",
    "symmetrize",
    "gaussian_loglik",
    "predict",
    "update",
    "filter_pass",
    "rts_pass",
    "pairwise_joint",
    "expect_pairwise",
]

JITTER_START = 1e-12
JITTER_MAX = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


class NumericalBreakdown(np.linalg.LinAlgError):
    """A covariance lost positive definiteness beyond the jitter schedule."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class GaussState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class FilterStep:
    predicted: GaussState
    posterior: GaussState
    mu: np.ndarray
    S: np.ndarray
    C: np.ndarray
    K: np.ndarray
    v: np.ndarray
    loglik: float


@dataclass
class FilterResult:
    """Filter output; ``initial`` is the prior of ``x_0`` and ``steps[k-1]`` is step k."""

    initial: GaussState
    steps: list
    loglik: float
    n_evals: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    def state(self, k: int) -> GaussState:
        """Filtered state at time ``k`` (``k = 0`` is the prior)."""
        return self.initial if k == 0 else self.steps[k - 1].posterior

    @property
    def means(self) -> np.ndarray:
        return np.array([s.posterior.mean for s in self.steps]).reshape(len(self.steps), -1)

    @property
    def covs(self) -> np.ndarray:
        n = self.initial.mean.size
        return np.array([s.posterior.cov for s in self.steps]).reshape(len(self.steps), n, n)


@dataclass
class SmootherStep:
    """Smoothed state at time k; the remaining fields are ``None`` at k = T."""

    smoothed: GaussState
    gain: Optional[np.ndarray] = None
    predicted: Optional[GaussState] = None
    cross: Optional[np.ndarray] = None


@dataclass
class SmootherResult:
    """Smoothed states for k = 0..T; ``steps[k]`` belongs to time k."""

    steps: list
    n_evals: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def T(self) -> int:
        return len(self.steps) - 1

    @property
    def means(self) -> np.ndarray:
        return np.array([s.smoothed.mean for s in self.steps])

    @property
    def covs(self) -> np.ndarray:
        return np.array([s.smoothed.cov for s in self.steps])


@dataclass(frozen=True)
class PairwiseJoint:
    """Gaussian over the stacked pair ``(x_k, x_{k-1})`` given all data."""

    k: int
    state: GaussState

    @property
    def n(self) -> int:
        return self.state.mean.size // 2


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def cholesky_jitter(P: np.ndarray, step: Optional[int] = None) -> np.ndarray:
    """Lower Cholesky factor of ``P``, adding diagonal jitter if needed.

    Jitter starts at ``1e-12 * trace(P) / n`` and grows tenfold up to
    ``1e-6 * trace(P) / n``. An all-zero matrix has the zero factor.
    """
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    if not np.any(P):
        return np.zeros_like(P)
    n = P.shape[0]
    scale = np.trace(P) / n
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalBreakdown("covariance has non-positive trace", step)
    eps = JITTER_START
    eye = np.eye(n)
    while eps <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(P + eps * scale * eye)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalBreakdown("covariance is not positive definite after jitter", step)


def gaussian_loglik(v: np.ndarray, L: np.ndarray) -> float:
    """``log N(v | 0, L L^T)`` for a lower Cholesky factor ``L``."""
    z = solve_triangular(L, v, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (v.size * LOG_2PI + logdet + z @ z))


def predict(
    state: GaussState,
    f: Callable[[np.ndarray], np.ndarray],
    Q: np.ndarray,
    rule: CubatureRule,
    step: Optional[int] = None,
) -> GaussState:
    """Sigma-point prediction through the vectorized dynamic ``f``."""
    L = cholesky_jitter(state.cov, step)
    X = sigma_points(rule, state.mean, L)
    F = f(X)
    m, P = kernels.sigma_moments(F, rule.mean_weights, rule.cov_weights)
    return GaussState(m, symmetrize(P + Q))


def update(
    pred: GaussState,
    y: np.ndarray,
    h: Callable[[np.ndarray], np.ndarray],
    R: np.ndarray,
    rule: CubatureRule,
    residual_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    step: Optional[int] = None,
) -> FilterStep:
    """Sigma-point measurement update.

    ``residual_fn`` post-processes the innovation ``y - mu`` (for example to
    wrap angles); the predicted measurement itself is the plain weighted
    mean of the transformed sigma-points.
    """
    L = cholesky_jitter(pred.cov, step)
    X = sigma_points(rule, pred.mean, L)
    Y = h(X)
    mu, S = kernels.sigma_moments(Y, rule.mean_weights, rule.cov_weights)
    S = symmetrize(S + R)
    C = kernels.weighted_cross(X - pred.mean, Y - mu, rule.cov_weights)
    LS = cholesky_jitter(S, step)
    K = cho_solve((LS, True), C.T).T
    v = np.asarray(y, dtype=float) - mu
    if residual_fn is not None:
        v = residual_fn(v)
    m = pred.mean + K @ v
    P = symmetrize(pred.cov - K @ S @ K.T)
    return FilterStep(
        predicted=pred,
        posterior=GaussState(m, P),
        mu=mu,
        S=S,
        C=C,
        K=K,
        v=v,
        loglik=gaussian_loglik(v, LS),
    )


def filter_pass(model, theta, y, rule: CubatureRule) -> FilterResult:
    """Run the sigma-point filter over measurements ``y`` of shape (T, d)."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(y), -1) if len(y) else np.zeros((0, model.d))
    Q = model.Q(theta)
    R = model.R(theta)
    state = GaussState(np.asarray(model.m0(theta), float), np.asarray(model.P0(theta), float))
    initial = state
    steps = []
    total = 0.0
    residual = getattr(model, "residual", None)
    for k in range(1, len(y) + 1):
        pred = predict(state, lambda X, k=k: model.f(X, theta, k - 1), Q, rule, step=k)
        st = update(pred, y[k - 1], lambda X, k=k: model.h(X, theta, k), R, rule, residual, step=k)
        steps.append(st)
        total += st.loglik
        state = st.posterior
    return FilterResult(initial, steps, total, n_evals=2 * rule.size * len(y))


def rts_pass(filt: FilterResult, model, theta, rule: CubatureRule) -> SmootherResult:
    """Sigma-point Rauch-Tung-Striebel backward pass, including time 0."""
    theta = np.asarray(theta, dtype=float)
    T = len(filt)
    Q = model.Q(theta)
    last = filt.state(T)
    out = [None] * (T + 1)
    out[T] = SmootherStep(GaussState(last.mean, last.cov))
    for k in range(T - 1, -1, -1):
        fs = filt.state(k)
        L = cholesky_jitter(fs.cov, k)
        X = sigma_points(rule, fs.mean, L)
        F = model.f(X, theta, k)
        m_pred, P_pred = kernels.sigma_moments(F, rule.mean_weights, rule.cov_weights)
        P_pred = symmetrize(P_pred + Q)
        D = kernels.weighted_cross(X - fs.mean, F - m_pred, rule.cov_weights)
        Lp = cholesky_jitter(P_pred, k + 1)
        G = cho_solve((Lp, True), D.T).T
        nxt = out[k + 1].smoothed
        m = fs.mean + G @ (nxt.mean - m_pred)
        P = symmetrize(fs.cov + G @ (nxt.cov - P_pred) @ G.T)
        out[k] = SmootherStep(GaussState(m, P), G, GaussState(m_pred, P_pred), D)
    return SmootherResult(out, n_evals=rule.size * T)


def pairwise_joint(smoother: SmootherResult, k: int) -> PairwiseJoint:
    """Joint Gaussian of ``(x_k, x_{k-1})`` for ``1 <= k <= T``."""
    if not 1 <= k <= smoother.T:
        raise IndexError(f"pairwise index {k} outside 1..{smoother.T}")
    cur = smoother.steps[k].smoothed
    prev = smoother.steps[k - 1]
    G = prev.gain
    upper = cur.cov @ G.T
    cov = np.block([[cur.cov, upper], [upper.T, prev.smoothed.cov]])
    mean = np.concatenate([cur.mean, prev.smoothed.mean])
    return PairwiseJoint(k, GaussState(mean, symmetrize(cov)))


def expect_pairwise(
    joint: PairwiseJoint,
    rule2n: CubatureRule,
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    cov_weights: bool = False,
) -> np.ndarray:
    """``E[g(x_k, x_{k-1})]`` under the pairwise joint.

    ``g`` receives the two (N, n) blocks of the 2n-dimensional sigma-points.
    """
    n = joint.n
    if rule2n.dim != 2 * n:
        raise ValueError(f"pairwise rule must have dimension {2 * n}, got {rule2n.dim}")
    L = cholesky_jitter(joint.state.cov, joint.k)
    Z = sigma_points(rule2n, joint.state.mean, L)
    G = np.asarray(g(Z[:, :n], Z[:, n:]), dtype=float)
    w = rule2n.cov_weights if cov_weights else rule2n.mean_weights
    return np.tensordot(w, G, axes=(0, 0))
