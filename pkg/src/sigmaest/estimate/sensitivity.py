"""Direct likelihood evaluation and its gradient by sensitivity equations.

The filter recursion is differentiated forward in time: each sigma-point
carries ``dX = dm + dL xi`` where ``dL`` is the derivative of the Cholesky
factor, and the propagated points carry ``F_x dX + df/dtheta``. All
quantities are vectorized over the parameter axis (leading axis of size m).
"""
from __future__ import annotations

from typing import Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .. import kernels
from ..cubature import CubatureRule, build_rule, sigma_points
from ..gauss import cholesky_jitter, filter_pass, gaussian_loglik, symmetrize

__all__ = ["resolve_rule", "log_likelihood", "loglik_gradient_sensitivity", "chol_derivative"]

RuleLike = Union[CubatureRule, str]


def resolve_rule(rule: RuleLike, n: int):
    """A :class:`CubatureRule` of dimension ``n``, or the string ``"ekf"``."""
    if isinstance(rule, CubatureRule):
        if rule.dim != n:
            raise ValueError(f"rule has dimension {rule.dim}, model needs {n}")
        return rule
    if isinstance(rule, str) and rule.strip().lower() == "ekf":
        return "ekf"
    return build_rule(rule, n)


def log_likelihood(model, theta, y, rule: RuleLike) -> float:
    """Approximate marginal log-likelihood from the prediction-error decomposition."""
    rule = resolve_rule(rule, model.n)
    if isinstance(rule, str):
        from ..baselines import ekf_filter_pass

        return ekf_filter_pass(model, theta, y).loglik
    return filter_pass(model, theta, y, rule).loglik


def chol_derivative(L: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """Forward-mode derivative of the lower Cholesky factor.

    ``dL = L Phi(L^{-1} dP L^{-T})`` where ``Phi`` keeps the strictly lower
    triangle and half the diagonal. ``dP`` may carry a leading batch axis.
    """
    dP = np.asarray(dP, dtype=float)
    batch = dP.ndim == 3
    dPs = dP if batch else dP[None]
    out = np.zeros_like(dPs)
    if np.any(np.diag(L) == 0.0):
        # degenerate factor of a zero covariance; derivative only defined for dP = 0
        if np.any(dPs):
            raise np.linalg.LinAlgError("Cholesky derivative of a singular factor")
        return out if batch else out[0]
    for i, D in enumerate(dPs):
        if not np.any(D):
            continue
        W = solve_triangular(L, D, lower=True)
        W = solve_triangular(L, W.T, lower=True).T
        Phi = np.tril(W, -1) + 0.5 * np.diag(np.diag(W))
        out[i] = L @ Phi
    return out if batch else out[0]


def _propagate_points(rule, m, dm, P, dP, step):
    L = cholesky_jitter(P, step)
    dL = chol_derivative(L, dP)
    X = sigma_points(rule, m, L)
    dX = dm[:, None, :] + np.einsum("pab,ib->pia", dL, rule.points)
    return X, dX


def _moment_derivs(Y, dY, wm, wc):
    """Mean and covariance of ``Y`` and their derivatives given ``dY`` (m, N, d)."""
    mu, S = kernels.sigma_moments(Y, wm, wc)
    dmu = np.einsum("i,pia->pa", wm, dY)
    E = Y - mu
    dE = dY - dmu[:, None, :]
    half = np.einsum("i,pia,ib->pab", wc, dE, E)
    dS = half + half.transpose(0, 2, 1)
    return mu, S, dmu, dS


def loglik_gradient_sensitivity(model, theta, y, rule: RuleLike, return_loglik: bool = False):
    """Exact gradient of the sigma-point log-likelihood in ``theta``.

    Returns the gradient, or ``(loglik, gradient)`` if ``return_loglik``.
    """
    rule = resolve_rule(rule, model.n)
    if isinstance(rule, str):
        raise ValueError("sensitivity gradients need a sigma-point rule; use finite differences for the EKF")
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(y), -1) if len(y) else np.zeros((0, model.d))
    wm, wc = rule.mean_weights, rule.cov_weights
    Q, R = model.Q(theta), model.R(theta)
    dQ, dR = model.dQ(theta), model.dR(theta)
    m = np.asarray(model.m0(theta), dtype=float)
    P = np.asarray(model.P0(theta), dtype=float)
    dm = model.dm0(theta)
    dP = model.dP0(theta)
    grad = np.zeros(model.m)
    total = 0.0
    for k in range(1, len(y) + 1):
        # prediction
        X, dX = _propagate_points(rule, m, dm, P, dP, k)
        F = model.f(X, theta, k - 1)
        dF = np.einsum("iab,pib->pia", model.F_x(X, theta, k - 1), dX)
        dF += model.df_dtheta(X, theta, k - 1).transpose(1, 0, 2)
        m_p, P_p, dm_p, dP_p = _moment_derivs(F, dF, wm, wc)
        P_p = symmetrize(P_p + Q)
        dP_p = dP_p + dQ

        # update
        X, dX = _propagate_points(rule, m_p, dm_p, P_p, dP_p, k)
        Y = model.h(X, theta, k)
        dY = np.einsum("iab,pib->pia", model.H_x(X, theta, k), dX)
        dY += model.dh_dtheta(X, theta, k).transpose(1, 0, 2)
        mu, S, dmu, dS = _moment_derivs(Y, dY, wm, wc)
        S = symmetrize(S + R)
        dS = dS + dR
        Xc = X - m_p
        dXc = dX - dm_p[:, None, :]
        Yc = Y - mu
        dYc = dY - dmu[:, None, :]
        C = kernels.weighted_cross(Xc, Yc, wc)
        dC = np.einsum("i,pia,ib->pab", wc, dXc, Yc) + np.einsum("i,ia,pib->pab", wc, Xc, dYc)
        LS = cholesky_jitter(S, k)
        K = cho_solve((LS, True), C.T).T
        Sinv = cho_solve((LS, True), np.eye(S.shape[0]))
        dK = dC @ Sinv - K @ dS @ Sinv
        v = y[k - 1] - mu
        v = model.residual(v)
        dv = -dmu
        m = m_p + K @ v
        dm = dm_p + dK @ v + dv @ K.T
        P = symmetrize(P_p - K @ S @ K.T)
        KSdK = K @ S @ dK.transpose(0, 2, 1)
        dP = dP_p - KSdK.transpose(0, 2, 1) - K @ dS @ K.T - KSdK
        dP = 0.5 * (dP + dP.transpose(0, 2, 1))

        alpha = Sinv @ v
        grad += -0.5 * np.einsum("ab,pba->p", Sinv, dS) - dv @ alpha + 0.5 * np.einsum("a,pab,b->p", alpha, dS, alpha)
        total += gaussian_loglik(v, LS)
    return (total, grad) if return_loglik else grad
