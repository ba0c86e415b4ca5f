"""Quasi-Newton maximum-likelihood estimation.

BFGS with a backtracking line search, run on the negative objective in a
transformed parameter space. Steps are accepted on the Armijo condition, or,
when the change in the objective is too small to be trusted, on the
approximate Wolfe conditions. Steps that raise a numerical breakdown or give
a non-finite objective are rejected and the step is shortened.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np

from ..gauss import NumericalBreakdown
from ..io import fmt
from .em import loglik_gradient_fisher
from .sensitivity import log_likelihood, loglik_gradient_sensitivity, resolve_rule

__all__ = [
    "OptimizerConfig",
    "LineSearchFailure",
    "TraceRow",
    "OptimResult",
    "maximize",
    "maximize_likelihood",
    "objective_with_prior",
    "finite_difference_gradient",
    "write_trace_csv",
]

GRADIENT_MODES = ("sensitivity", "fisher", "finite-difference")
_APPROX_WOLFE_EPS = 1e-6
_WOLFE_SIGMA = 0.9


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer settings.

    ``transform`` is ``"auto"`` (log for parameters the model declares
    positive), ``"log"``, ``"identity"``, or a mapping from parameter name
    to ``"log"``/``"identity"``.
    """

    max_iter: int = 200
    gtol: float = 1e-6
    c1: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 40
    transform: Union[str, Mapping[str, str]] = "auto"
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.gtol <= 0 or self.max_iter < 0 or self.initial_step <= 0 or self.fd_step <= 0:
            raise ValueError("optimizer tolerances and steps must be positive")
        if not 0 < self.c1 < 1 or not 0 < self.shrink < 1:
            raise ValueError("Armijo constants must lie in (0, 1)")


class LineSearchFailure(RuntimeError):
    """No acceptable step was found; ``theta`` is the best point reached."""

    def __init__(self, message: str, theta: np.ndarray, value: float, trace: list):
        self.theta = theta
        self.value = value
        self.trace = trace
        super().__init__(message)


@dataclass
class TraceRow:
    iteration: int
    theta: np.ndarray
    objective: float
    grad_norm: float
    n_evals: int
    wall_time: float


@dataclass
class OptimResult:
    theta: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def n_evals(self) -> int:
        return self.trace[-1].n_evals if self.trace else 0


def _log_mask(model, names, transform) -> np.ndarray:
    positive = set(getattr(model, "positive", ())) if model is not None else set()
    out = []
    for name in names:
        if isinstance(transform, Mapping):
            kind = transform.get(name, "auto")
        else:
            kind = transform
        if kind == "auto":
            out.append(name in positive)
        elif kind in ("log", "identity"):
            out.append(kind == "log")
        else:
            raise ValueError(f"unknown transform {kind!r}")
    return np.array(out, dtype=bool)


def maximize(
    fun: Callable[[np.ndarray], tuple],
    theta0,
    model=None,
    config: Optional[OptimizerConfig] = None,
    count_evals: Optional[Callable[[], int]] = None,
) -> OptimResult:
    """Maximize ``fun(theta) -> (value, gradient)``.

    ``model`` supplies parameter names for the transform; ``count_evals``
    returns the running model-evaluation count recorded in the trace.
    """
    cfg = config or OptimizerConfig()
    theta0 = np.asarray(theta0, dtype=float).copy()
    names = list(getattr(model, "free", [str(i) for i in range(theta0.size)]))
    logm = _log_mask(model, names, cfg.transform)
    if np.any(theta0[logm] <= 0):
        raise ValueError("log-transformed parameters must start positive")

    def to_theta(u):
        th = u.copy()
        th[logm] = np.exp(u[logm])
        return th

    def neg(u):
        th = to_theta(u)
        try:
            val, g = fun(th)
        except (NumericalBreakdown, np.linalg.LinAlgError, FloatingPointError):
            return np.inf, None
        val = float(val)
        if not np.isfinite(val):
            return np.inf, None
        g = np.asarray(g, dtype=float) * np.where(logm, th, 1.0)
        if not np.all(np.isfinite(g)):
            return np.inf, None
        return -val, -g

    counter = count_evals or (lambda: 0)
    start = time.perf_counter()
    u = np.where(logm, np.log(np.where(logm, theta0, 1.0)), theta0)
    fx, gx = neg(u)
    if gx is None:
        raise NumericalBreakdown("objective undefined at the initial point")
    trace = [TraceRow(0, to_theta(u), -fx, float(np.linalg.norm(gx, np.inf)), counter(), time.perf_counter() - start)]
    Hinv = np.eye(u.size)
    scaled = False
    reset_used = False
    it = 0
    while it < cfg.max_iter and np.linalg.norm(gx, np.inf) > cfg.gtol:
        p = -Hinv @ gx
        slope = gx @ p
        if slope >= 0:
            Hinv = np.eye(u.size)
            p = -gx
            slope = gx @ p
        alpha = cfg.initial_step
        accepted = False
        # changes of f below eps_f are not trusted (rounding noise near the optimum);
        # such steps must pass the approximate Wolfe slope test of Hager and Zhang
        eps_f = _APPROX_WOLFE_EPS * abs(fx)
        for _ in range(cfg.max_backtracks):
            un = u + alpha * p
            fn, gn = neg(un)
            if gn is not None:
                if fn <= fx + cfg.c1 * alpha * slope and fx - fn > eps_f:
                    accepted = True
                    break
                new_slope = gn @ p
                if fn <= fx + eps_f and _WOLFE_SIGMA * slope <= new_slope <= (2.0 * cfg.c1 - 1.0) * slope:
                    accepted = True
                    break
            alpha *= cfg.shrink
        if not accepted:
            if not reset_used:
                reset_used = True
                Hinv = np.eye(u.size)
                scaled = False
                continue
            raise LineSearchFailure(
                f"line search failed at iteration {it + 1} (gradient norm {np.linalg.norm(gx, np.inf):.3e})",
                to_theta(u),
                -fx,
                trace,
            )
        reset_used = False
        s = un - u
        yv = gn - gx
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if not scaled:
                Hinv = np.eye(u.size) * (sy / (yv @ yv))
                scaled = True
            rho = 1.0 / sy
            V = np.eye(u.size) - rho * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        u, fx, gx = un, fn, gn
        it += 1
        trace.append(
            TraceRow(it, to_theta(u), -fx, float(np.linalg.norm(gx, np.inf)), counter(), time.perf_counter() - start)
        )
    converged = bool(np.linalg.norm(gx, np.inf) <= cfg.gtol)
    return OptimResult(to_theta(u), -fx, -gx / np.where(logm, to_theta(u), 1.0), it, converged, trace)


def finite_difference_gradient(
    fun: Callable[[np.ndarray], float], theta, step: float = 1e-5, order: int = 2
) -> np.ndarray:
    """Central differences with step ``step * (1 + |theta_i|)``.

    ``order`` 2 uses the three-point stencil; ``order`` 4 the five-point
    stencil, whose truncation error stays well below the optimizer's
    gradient tolerance.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    theta = np.asarray(theta, dtype=float)
    g = np.zeros(theta.size)
    for i in range(theta.size):
        h = step * (1.0 + abs(theta[i]))
        e = np.zeros(theta.size)
        e[i] = h
        d1 = fun(theta + e) - fun(theta - e)
        if order == 2:
            g[i] = d1 / (2.0 * h)
        else:
            d2 = fun(theta + 2.0 * e) - fun(theta - 2.0 * e)
            g[i] = (8.0 * d1 - d2) / (12.0 * h)
    return g


class _Counter:
    def __init__(self):
        self.count = 0

    def __call__(self):
        return self.count


def _objective(model, y, rule, gradient_mode, rule2n, log_prior, log_prior_grad, cfg, counter):
    if gradient_mode not in GRADIENT_MODES:
        raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
    rule = resolve_rule(rule, model.n)
    T = len(y)
    per_pass = 2 * T * (1 if isinstance(rule, str) else rule.size)
    if isinstance(rule, str) and gradient_mode != "finite-difference":
        raise ValueError("the EKF likelihood supports only finite-difference gradients")

    def prior(th):
        return 0.0 if log_prior is None else float(log_prior(th))

    def prior_grad(th):
        if log_prior is None:
            return np.zeros(th.size)
        if log_prior_grad is not None:
            return np.asarray(log_prior_grad(th), dtype=float)
        return finite_difference_gradient(log_prior, th, cfg.fd_step, order=4)

    def ll(th):
        counter.count += per_pass
        return log_likelihood(model, th, y, rule)

    def fun(th):
        lp = prior(th)
        if not np.isfinite(lp):
            return -np.inf, np.zeros(th.size)
        if gradient_mode == "sensitivity":
            counter.count += per_pass
            val, g = loglik_gradient_sensitivity(model, th, y, rule, return_loglik=True)
        elif gradient_mode == "fisher":
            val = ll(th)
            counter.count += 2 * per_pass
            g = loglik_gradient_fisher(model, th, y, rule, rule2n)
        else:
            val = ll(th)
            g = finite_difference_gradient(ll, th, cfg.fd_step, order=4)
        return val + lp, g + prior_grad(th)

    return fun


def maximize_likelihood(
    model,
    theta0,
    y,
    rule,
    config: Optional[OptimizerConfig] = None,
    gradient_mode: str = "sensitivity",
    rule2n=None,
    log_prior: Optional[Callable] = None,
    log_prior_grad: Optional[Callable] = None,
) -> OptimResult:
    """Maximum-likelihood (or MAP with ``log_prior``) estimate of the free parameters."""
    cfg = config or OptimizerConfig()
    y = np.asarray(y, dtype=float)
    y = y.reshape(len(y), -1) if len(y) else np.zeros((0, model.d))
    counter = _Counter()
    fun = _objective(model, y, rule, gradient_mode, rule2n, log_prior, log_prior_grad, cfg, counter)
    return maximize(fun, theta0, model, cfg, counter)


def objective_with_prior(model, theta, y, rule, log_prior: Optional[Callable] = None) -> float:
    """Unnormalized log-posterior: log-likelihood plus ``log_prior(theta)``."""
    lp = 0.0 if log_prior is None else float(log_prior(np.asarray(theta, dtype=float)))
    if not np.isfinite(lp):
        return lp
    return log_likelihood(model, theta, y, rule) + lp


def write_trace_csv(result: Union[OptimResult, list], path, names=None, include_time: bool = False) -> None:
    """Write the optimizer trace; wall time only if ``include_time``."""
    rows = result.trace if isinstance(result, OptimResult) else result
    m = rows[0].theta.size if rows else 0
    names = list(names) if names is not None else [f"theta{i}" for i in range(m)]
    header = ["iteration"] + names + ["objective", "grad_norm", "n_evals"] + (["wall_time"] if include_time else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            row = [r.iteration] + [fmt(v) for v in r.theta] + [fmt(r.objective), fmt(r.grad_norm), r.n_evals]
            if include_time:
                row.append(fmt(r.wall_time))
            w.writerow(row)
