"""Expectation-maximization with sigma-point smoothing.

The E-step freezes the smoothing distribution at the current parameter and
places sigma-points once. The dynamic term of the expected complete-data
log-likelihood is split as

    E[(x_k - f)(x_k - f)^T] = E[x_k x_k^T] - E[x_k f^T] - E[f x_k^T] + E[f f^T]

where the cross moment uses the 2n-dimensional pairwise points and
``E[f f^T]`` uses the single-state points of ``x_{k-1}``. This is the same
set of expectations that feeds the closed-form M-step statistics, so the
closed-form update is the exact maximizer of the numerically evaluated
function.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..cubature import CubatureRule, build_rule, sigma_points
from ..gauss import (
    LOG_2PI,
    NumericalBreakdown,
    SmootherResult,
    cholesky_jitter,
    filter_pass,
    pairwise_joint,
    rts_pass,
    symmetrize,
)
from ..models import LinearInParamsModel
from .sensitivity import resolve_rule

__all__ = [
    "EStep",
    "e_step",
    "q_function",
    "q_gradient",
    "loglik_gradient_fisher",
    "EMStatistics",
    "em_statistics",
    "SingularStatistic",
    "EMFailure",
    "m_step_closed_form",
    "EMTrace",
    "em_iterate",
    "smoothing_entropy",
]


class SingularStatistic(np.linalg.LinAlgError):
    """A statistic that must be inverted in the M-step is singular."""

    def __init__(self, name: str):
        self.statistic = name
        super().__init__(f"statistic {name} is singular")


class EMFailure(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"EM iteration {iteration}: {cause}")


def _pair_rule(rule: CubatureRule, rule2n: Optional[CubatureRule]) -> CubatureRule:
    if rule2n is None:
        return build_rule(rule.spec, 2 * rule.dim)
    if isinstance(rule2n, str):
        return build_rule(rule2n, 2 * rule.dim)
    if rule2n.dim != 2 * rule.dim:
        raise ValueError(f"pairwise rule must have dimension {2 * rule.dim}, got {rule2n.dim}")
    return rule2n


@dataclass
class EStep:
    """Frozen smoothing moments and sigma-points for one E-step."""

    smoother: SmootherResult
    y: np.ndarray
    w: np.ndarray  # single-state mean weights
    w2: np.ndarray  # pairwise mean weights
    X: list  # X[k]: single-state points of x_k, k = 0..T
    Zc: list  # Zc[k]: x_k block of the pairwise points, k = 1..T (index 0 unused)
    Zp: list  # Zp[k]: x_{k-1} block
    Sxx: np.ndarray  # sum over k = 1..T of E[x_k x_k^T]

    @property
    def T(self) -> int:
        return len(self.y)


def e_step(smoother: SmootherResult, y, rule: CubatureRule, rule2n: Optional[CubatureRule] = None) -> EStep:
    """Place the sigma-points of every smoothed and pairwise marginal."""
    rule2n = _pair_rule(rule, rule2n)
    n = rule.dim
    T = smoother.T
    y = np.asarray(y, dtype=float).reshape(T, -1) if T else np.zeros((0, 0))
    if len(y) != T:
        raise ValueError(f"smoother covers T={T} steps but y has {len(y)} rows")
    X = []
    for k, st in enumerate(smoother.steps):
        L = cholesky_jitter(st.smoothed.cov, k)
        X.append(sigma_points(rule, st.smoothed.mean, L))
    Zc, Zp = [None], [None]
    Sxx = np.zeros((n, n))
    for k in range(1, T + 1):
        joint = pairwise_joint(smoother, k)
        L = cholesky_jitter(joint.state.cov, k)
        Z = sigma_points(rule2n, joint.state.mean, L)
        Zc.append(Z[:, :n])
        Zp.append(Z[:, n:])
        s = smoother.steps[k].smoothed
        Sxx += s.cov + np.outer(s.mean, s.mean)
    return EStep(smoother, y, rule.mean_weights, rule2n.mean_weights, X, Zc, Zp, Sxx)


def _moments(model, theta, es: EStep):
    """Summed residual second moments of the dynamic and measurement terms."""
    n, d = model.n, model.d
    M = es.Sxx.copy()
    N = np.zeros((d, d))
    for k in range(1, es.T + 1):
        Fs = model.f(es.X[k - 1], theta, k - 1)
        Fz = model.f(es.Zp[k], theta, k - 1)
        cross = np.einsum("i,ia,ib->ab", es.w2, es.Zc[k], Fz)
        M += np.einsum("i,ia,ib->ab", es.w, Fs, Fs) - cross - cross.T
        E = model.residual(es.y[k - 1] - model.h(es.X[k], theta, k))
        N += np.einsum("i,ia,ib->ab", es.w, E, E)
    return symmetrize(M), symmetrize(N)


def _initial_moment(model, theta, es: EStep):
    s0 = es.smoother.steps[0].smoothed
    r = s0.mean - model.m0(theta)
    return symmetrize(s0.cov + np.outer(r, r)), r


def _gauss_term(Sigma, M, count):
    """``-count/2 log|2 pi Sigma| - 1/2 tr(Sigma^{-1} M)``."""
    c = cho_factor(Sigma, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return -0.5 * count * (Sigma.shape[0] * LOG_2PI + logdet) - 0.5 * np.trace(cho_solve(c, M))


def q_function(model, theta, smoother_or_estep, rule=None, rule2n=None, y=None) -> float:
    """Sigma-point approximation of the expected complete-data log-likelihood.

    ``smoother_or_estep`` is either a prepared :class:`EStep` or a smoother
    result computed at the previous parameter (then ``rule`` and ``y`` are
    required).
    """
    es = _as_estep(smoother_or_estep, model, rule, rule2n, y)
    theta = np.asarray(theta, dtype=float)
    M0, _ = _initial_moment(model, theta, es)
    M, N = _moments(model, theta, es)
    T = es.T
    try:
        out = _gauss_term(model.P0(theta), M0, 1)
        if T:
            out += _gauss_term(model.Q(theta), M, T) + _gauss_term(model.R(theta), N, T)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown(f"noise covariance not positive definite: {exc}") from exc
    return float(out)


def _as_estep(obj, model, rule, rule2n, y) -> EStep:
    if isinstance(obj, EStep):
        return obj
    if rule is None or y is None:
        raise ValueError("rule and y are required when passing a smoother result")
    rule = resolve_rule(rule, model.n)
    return e_step(obj, y, rule, rule2n)


def _cov_grad(Sigma, dSigma, M, count):
    """Gradient of ``-count/2 log|Sigma| - 1/2 tr(Sigma^{-1} M)`` along each ``dSigma``."""
    c = cho_factor(Sigma, lower=True)
    SiM = cho_solve(c, M)
    out = np.empty(len(dSigma))
    for i, dS in enumerate(dSigma):
        A = cho_solve(c, dS)
        out[i] = -0.5 * count * np.trace(A) + 0.5 * np.trace(A @ SiM)
    return out


def q_gradient(model, theta, smoother_or_estep, rule=None, rule2n=None, y=None) -> np.ndarray:
    """Analytic gradient of :func:`q_function` with the smoothing moments frozen."""
    es = _as_estep(smoother_or_estep, model, rule, rule2n, y)
    theta = np.asarray(theta, dtype=float)
    T = es.T
    M0, r0 = _initial_moment(model, theta, es)
    P0 = model.P0(theta)
    grad = _cov_grad(P0, model.dP0(theta), M0, 1)
    grad += model.dm0(theta) @ cho_solve(cho_factor(P0, lower=True), r0)
    if T == 0:
        return grad
    Q, R = model.Q(theta), model.R(theta)
    M, N = _moments(model, theta, es)
    grad += _cov_grad(Q, model.dQ(theta), M, T)
    grad += _cov_grad(R, model.dR(theta), N, T)
    # sum over k of E[df (x_k - f)^T] and E[dh (y_k - h)^T]
    Gf = np.zeros((model.m, model.n, model.n))
    Gh = np.zeros((model.m, model.d, model.d))
    for k in range(1, T + 1):
        Fs = model.f(es.X[k - 1], theta, k - 1)
        dFs = model.df_dtheta(es.X[k - 1], theta, k - 1)
        dFz = model.df_dtheta(es.Zp[k], theta, k - 1)
        Gf += np.einsum("i,ipa,ib->pab", es.w2, dFz, es.Zc[k])
        Gf -= np.einsum("i,ipa,ib->pab", es.w, dFs, Fs)
        E = model.residual(es.y[k - 1] - model.h(es.X[k], theta, k))
        Gh += np.einsum("i,ipa,ib->pab", es.w, model.dh_dtheta(es.X[k], theta, k), E)
    grad += np.einsum("ab,pba->p", cho_solve(cho_factor(Q, lower=True), np.eye(model.n)), Gf)
    grad += np.einsum("ab,pba->p", cho_solve(cho_factor(R, lower=True), np.eye(model.d)), Gh)
    return grad


def loglik_gradient_fisher(model, theta, y, rule, rule2n=None) -> np.ndarray:
    """Log-likelihood gradient from the Fisher identity at ``theta``."""
    rule = resolve_rule(rule, model.n)
    if isinstance(rule, str):
        raise ValueError("the Fisher-identity gradient needs a sigma-point rule")
    y = np.asarray(y, dtype=float).reshape(len(y), -1) if len(y) else np.zeros((0, model.d))
    filt = filter_pass(model, theta, y, rule)
    sm = rts_pass(filt, model, theta, rule)
    return q_gradient(model, theta, e_step(sm, y, rule, rule2n))


def smoothing_entropy(smoother: SmootherResult) -> float:
    """Entropy of the Gaussian smoothing distribution of ``x_{0:T}``.

    Uses the backward Markov factorization, whose conditional covariances
    are ``P_{k|T} - G_k P_{k+1|T} G_k^T``.
    """
    n = smoother.steps[0].smoothed.mean.size
    steps = smoother.steps
    covs = [steps[-1].smoothed.cov]
    for k in range(len(steps) - 1):
        G = steps[k].gain
        covs.append(steps[k].smoothed.cov - G @ steps[k + 1].smoothed.cov @ G.T)
    total = 0.0
    for P in covs:
        _, logdet = np.linalg.slogdet(P)
        total += 0.5 * (n * (1.0 + LOG_2PI) + logdet)
    return float(total)


# -- closed-form M-step -------------------------------------------------------------


@dataclass
class EMStatistics:
    """Averaged sufficient statistics over k = 1..T."""

    Sigma: np.ndarray
    Phi: np.ndarray
    Theta: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    m0T: np.ndarray
    P0T: np.ndarray
    T: int


def em_statistics(smoother, lin: LinearInParamsModel, rule, rule2n=None, y=None) -> EMStatistics:
    """Statistics of a linear-in-parameters model from one E-step.

    ``smoother`` may be an :class:`EStep` (then ``y`` is taken from it).
    """
    if isinstance(smoother, EStep):
        es = smoother
    else:
        if y is None:
            raise ValueError("y is required when passing a smoother result")
        es = e_step(smoother, y, resolve_rule(rule, lin.n), rule2n)
    T = es.T
    s0 = es.smoother.steps[0].smoothed
    if T == 0:
        raise ValueError("EM statistics need at least one measurement")
    nf = lin.A.shape[1]
    nh = lin.H.shape[1]
    Phi = np.zeros((nf, nf))
    Theta = np.zeros((nh, nh))
    B = np.zeros((lin.d, nh))
    C = np.zeros((lin.n, nf))
    for k in range(1, T + 1):
        Ft = lin.f_tilde(es.X[k - 1], k - 1)
        Phi += np.einsum("i,ia,ib->ab", es.w, Ft, Ft)
        Ht = lin.h_tilde(es.X[k], k)
        Theta += np.einsum("i,ia,ib->ab", es.w, Ht, Ht)
        B += np.outer(es.y[k - 1], es.w @ Ht)
        C += np.einsum("i,ia,ib->ab", es.w2, es.Zc[k], lin.f_tilde(es.Zp[k], k - 1))
    D = es.y.T @ es.y
    return EMStatistics(
        Sigma=symmetrize(es.Sxx / T),
        Phi=symmetrize(Phi / T),
        Theta=symmetrize(Theta / T),
        B=B / T,
        C=C / T,
        D=symmetrize(D / T),
        m0T=s0.mean.copy(),
        P0T=s0.cov.copy(),
        T=T,
    )


_TOKEN = re.compile(r"^(A|H|Q|R|m0|P0)(?:\[(:,)?(\d+)\])?$")


def _parse_free(free) -> dict:
    out: dict = {}
    for tok in free:
        mt = _TOKEN.match(tok.replace(" ", ""))
        if mt is None:
            raise ValueError(f"unknown free-parameter token {tok!r}")
        name, col, idx = mt.groups()
        if idx is None:
            out[name] = None
            continue
        if name in ("A", "H") and col is None:
            raise ValueError(f"{name} entries are freed by column, write {name}[:,j]")
        if name in ("Q", "R", "P0") and col is not None:
            raise ValueError(f"{name} entries are diagonal, write {name}[i]")
        if name == "m0":
            raise ValueError("m0 is freed as a whole")
        if out.get(name, ()) is None:
            continue
        out.setdefault(name, set()).add(int(idx))
    return out


def _solve_right(Mat, Stat, name):
    """``Mat Stat^{-1}`` with a singularity check on ``Stat``."""
    try:
        c = cho_factor(Stat, lower=True)
    except np.linalg.LinAlgError:
        raise SingularStatistic(name) from None
    if np.min(np.abs(np.diag(c[0]))) < 1e-12 * max(1.0, np.sqrt(np.max(np.abs(np.diag(Stat))))):
        raise SingularStatistic(name)
    return cho_solve(c, Mat.T).T


def _coef_update(coef, cross, gram, cols, name):
    if cols is None:
        return _solve_right(cross, gram, name)
    cols = sorted(cols)
    if max(cols) >= coef.shape[1]:
        raise ValueError(f"column index {max(cols)} out of range for a matrix with {coef.shape[1]} columns")
    rest = [j for j in range(coef.shape[1]) if j not in cols]
    rhs = cross[:, cols] - coef[:, rest] @ gram[np.ix_(rest, cols)]
    out = coef.copy()
    out[:, cols] = _solve_right(rhs, gram[np.ix_(cols, cols)], name)
    return out


def _cov_update(current, M, entries, name):
    if entries is None:
        return symmetrize(M)
    if np.any(current - np.diag(np.diag(current))):
        raise ValueError(f"entry-wise update of {name} needs a diagonal matrix")
    out = current.copy()
    for i in entries:
        out[i, i] = M[i, i]
    return out


def m_step_closed_form(stats: EMStatistics, free, current: LinearInParamsModel) -> LinearInParamsModel:
    """Maximize the expected complete-data log-likelihood over the free blocks.

    ``free`` holds tokens ``A``, ``H``, ``Q``, ``R``, ``m0``, ``P0``; column
    subsets ``A[:,j]``, ``H[:,j]``; or diagonal entries ``Q[i]``, ``R[i]``,
    ``P0[i]``. Blocks are solved in the order (A, Q), (H, R), (m0, P0), each
    covariance using the already updated coefficient.
    """
    fr = _parse_free(free)
    A, H, Q, R, m0, P0 = current.A, current.H, current.Q, current.R, current.m0, current.P0
    if "A" in fr:
        A = _coef_update(A, stats.C, stats.Phi, fr["A"], "Phi")
    if "Q" in fr:
        M = stats.Sigma - stats.C @ A.T - A @ stats.C.T + A @ stats.Phi @ A.T
        Q = _cov_update(Q, M, fr["Q"], "Q")
    if "H" in fr:
        H = _coef_update(H, stats.B, stats.Theta, fr["H"], "Theta")
    if "R" in fr:
        N = stats.D - H @ stats.B.T - stats.B @ H.T + H @ stats.Theta @ H.T
        R = _cov_update(R, N, fr["R"], "R")
    if "m0" in fr:
        m0 = stats.m0T.copy()
    if "P0" in fr:
        r = stats.m0T - m0
        P0 = _cov_update(P0, stats.P0T + np.outer(r, r), fr["P0"], "P0")
    return current.replace(A=A, H=H, Q=Q, R=R, m0=m0, P0=P0)


# -- iteration ------------------------------------------------------------------------


@dataclass
class EMTrace:
    """Parameters ``theta[0..N]`` with the E-step objective and log-likelihood at each."""

    thetas: list
    q_values: list = field(default_factory=list)
    logliks: list = field(default_factory=list)
    n_evals: list = field(default_factory=list)

    @property
    def theta(self):
        return self.thetas[-1]


def em_iterate(
    model,
    theta0,
    y,
    rule,
    iterations: int,
    rule2n=None,
    m_step: str = "auto",
    optimizer_config=None,
) -> EMTrace:
    """Run ``iterations`` EM steps from ``theta0``.

    ``model`` is either a :class:`LinearInParamsModel` (``theta0`` ignored,
    the trace holds updated models; its ``free`` set selects the blocks) or
    a state-space model. For the latter the closed-form M-step is used when
    the model maps its free parameters onto blocks of its linear view and
    ``m_step`` is ``"auto"`` or ``"closed"``; otherwise ``q_function`` is
    maximized numerically.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    y = np.asarray(y, dtype=float)
    if isinstance(model, LinearInParamsModel):
        return _em_linear(model, y, rule, iterations, rule2n)
    rule = resolve_rule(rule, model.n)
    if isinstance(rule, str):
        raise ValueError("EM needs a sigma-point rule")
    y = y.reshape(len(y), -1)
    tokens = model.em_tokens() if m_step in ("auto", "closed") else None
    if m_step == "closed" and tokens is None:
        raise ValueError(f"{type(model).__name__} has no closed-form M-step for {model.free}")
    theta = np.asarray(theta0, dtype=float).copy()
    trace = EMTrace([theta.copy()])
    evals = 0
    for it in range(1, iterations + 1):
        try:
            filt = filter_pass(model, theta, y, rule)
            sm = rts_pass(filt, model, theta, rule)
            evals += filt.n_evals + sm.n_evals
            es = e_step(sm, y, rule, rule2n)
            trace.logliks.append(filt.loglik)
            trace.q_values.append(q_function(model, theta, es))
            if tokens is not None:
                lin = model.linear_view(theta)
                stats = em_statistics(es, lin, rule)
                new_lin = m_step_closed_form(stats, tokens.values(), lin)
                theta = model.theta_from_linear(new_lin, theta)
            else:
                from .optim import maximize

                res = maximize(
                    lambda th: (q_function(model, th, es), q_gradient(model, th, es)),
                    theta,
                    model,
                    optimizer_config,
                )
                theta = res.theta
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EMFailure(it, exc) from exc
        trace.thetas.append(np.asarray(theta, dtype=float).copy())
        trace.n_evals.append(evals)
    filt = filter_pass(model, theta, y, rule)
    trace.logliks.append(filt.loglik)
    return trace


def _em_linear(lin: LinearInParamsModel, y, rule, iterations, rule2n) -> EMTrace:
    model = lin.as_model()
    rule = resolve_rule(rule, model.n)
    y = y.reshape(len(y), -1)
    trace = EMTrace([lin])
    for it in range(1, iterations + 1):
        try:
            filt = filter_pass(model, [], y, rule)
            sm = rts_pass(filt, model, [], rule)
            es = e_step(sm, y, rule, rule2n)
            trace.logliks.append(filt.loglik)
            trace.q_values.append(q_function(model, [], es))
            lin = m_step_closed_form(em_statistics(es, lin, rule), lin.free, lin)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EMFailure(it, exc) from exc
        model = lin.as_model()
        trace.thetas.append(lin)
        trace.n_evals.append(it * 3 * rule.size * len(y))
    trace.logliks.append(filter_pass(model, [], y, rule).loglik)
    return trace
