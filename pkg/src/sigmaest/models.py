"""State-space models with additive Gaussian noise.

A model is ``x_{k+1} = f(x_k, theta, k) + q_k``, ``y_k = h(x_k, theta, k) + r_k``
with ``x_0 ~ N(m0, P0)``. Every model carries a dictionary of named scalar
parameters; ``free`` selects which of them form the parameter vector
``theta`` passed to the model functions. All functions are vectorized over
the leading axis of ``x``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .io import fmt

__all__ = [
    "StateSpaceModel",
    "LinearGaussianModel",
    "UNGMModel",
    "CTModel",
    "LinearInParamsModel",
    "SimOutput",
    "simulate",
    "ungm_model",
    "ct_model",
    "initial_uncertainty_sweep",
    "wrap_angle",
    "save_sim",
    "load_sim",
]


def wrap_angle(v):
    """Wrap angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(v, dtype=float), 2.0 * np.pi)


class StateSpaceModel:
    """Base class: subclasses implement the underscore hooks on a parameter dict.

    Derivative hooks return the partial with respect to one named
    parameter; a parameter a hook does not handle has a zero partial.
    """

    name = "model"
    n: int
    d: int
    positive: tuple = ()  # parameters optimized in log space by default

    def __init__(self, values: dict, free: Sequence[str] = ()):
        unknown = set(free) - set(values)
        if unknown:
            raise ValueError(f"unknown free parameters {sorted(unknown)}; have {sorted(values)}")
        self.values = dict(values)
        self.free = tuple(free)

    # -- parameter handling -----------------------------------------------
    @property
    def m(self) -> int:
        return len(self.free)

    @property
    def theta0(self) -> np.ndarray:
        return np.array([self.values[k] for k in self.free], dtype=float)

    def params(self, theta) -> dict:
        p = dict(self.values)
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != len(self.free):
            raise ValueError(f"expected {len(self.free)} parameters {self.free}, got {theta.size}")
        for name, val in zip(self.free, theta):
            p[name] = float(val)
        return p

    def with_free(self, *free: str) -> "StateSpaceModel":
        out = self._copy()
        out.free = tuple(free)
        unknown = set(free) - set(out.values)
        if unknown:
            raise ValueError(f"unknown free parameters {sorted(unknown)}")
        return out

    def with_values(self, **values) -> "StateSpaceModel":
        out = self._copy()
        out.values.update(values)
        return out

    def _copy(self):
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.values = dict(self.values)
        return out

    # -- public model functions -------------------------------------------
    def f(self, x, theta, k):
        return self._f(np.atleast_2d(x), self.params(theta), k)

    def h(self, x, theta, k):
        return self._h(np.atleast_2d(x), self.params(theta), k)

    def Q(self, theta):
        return self._Q(self.params(theta))

    def R(self, theta):
        return self._R(self.params(theta))

    def m0(self, theta):
        return self._m0(self.params(theta))

    def P0(self, theta):
        return self._P0(self.params(theta))

    def F_x(self, x, theta, k):
        """Jacobian of ``f`` in ``x``: (N, n, n)."""
        return self._F_x(np.atleast_2d(x), self.params(theta), k)

    def H_x(self, x, theta, k):
        """Jacobian of ``h`` in ``x``: (N, d, n)."""
        return self._H_x(np.atleast_2d(x), self.params(theta), k)

    def df_dtheta(self, x, theta, k):
        """Parameter partials of ``f``: (N, m, n)."""
        x = np.atleast_2d(x)
        p = self.params(theta)
        out = np.zeros((x.shape[0], self.m, self.n))
        for i, name in enumerate(self.free):
            part = self._df(name, x, p, k)
            if part is not None:
                out[:, i, :] = part
        return out

    def dh_dtheta(self, x, theta, k):
        """Parameter partials of ``h``: (N, m, d)."""
        x = np.atleast_2d(x)
        p = self.params(theta)
        out = np.zeros((x.shape[0], self.m, self.d))
        for i, name in enumerate(self.free):
            part = self._dh(name, x, p, k)
            if part is not None:
                out[:, i, :] = part
        return out

    def dQ(self, theta):
        return self._stack(theta, self._dQ, (self.n, self.n))

    def dR(self, theta):
        return self._stack(theta, self._dR, (self.d, self.d))

    def dm0(self, theta):
        return self._stack(theta, self._dm0, (self.n,))

    def dP0(self, theta):
        return self._stack(theta, self._dP0, (self.n, self.n))

    def _stack(self, theta, hook, shape):
        p = self.params(theta)
        out = np.zeros((self.m,) + shape)
        for i, name in enumerate(self.free):
            part = hook(name, p)
            if part is not None:
                out[i] = part
        return out

    def residual(self, v):
        return v

    def affine_measurement(self, theta, k):
        """``(H, b)`` with ``h(x) = H x + b`` if the measurement is affine, else ``None``."""
        return None

    def linear_view(self, theta) -> "LinearInParamsModel":
        raise NotImplementedError(f"{type(self).__name__} has no linear-in-parameters form")

    def em_tokens(self) -> Optional[dict]:
        """Map each free parameter to a closed-form M-step block, or ``None``."""
        return None

    def theta_from_linear(self, lin: "LinearInParamsModel", theta) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form M-step")

    # -- hooks ---------------------------------------------------------------
    def _df(self, name, x, p, k):
        return None

    def _dh(self, name, x, p, k):
        return None

    def _dQ(self, name, p):
        return None

    def _dR(self, name, p):
        return None

    def _dm0(self, name, p):
        return None

    def _dP0(self, name, p):
        return None

    def describe(self) -> dict:
        return {"model": self.name, "values": _jsonable(self.values), "free": list(self.free)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# -- linear-Gaussian ----------------------------------------------------------


class LinearGaussianModel(StateSpaceModel):
    """``x_k = a A x_{k-1} + q``, ``y_k = H x_k + bias + r``.

    Scalar parameters: ``a`` scales ``A``, ``q`` scales ``Q``, ``r`` scales
    ``R``, ``p0`` scales ``P0`` and ``bias`` is added to every measurement
    component. All default to the identity value.
    """

    name = "linear"
    positive = ("q", "r", "p0")

    def __init__(self, A, H, Q, R, m0, P0, free=(), **values):
        self.A_base = np.atleast_2d(np.asarray(A, dtype=float))
        self.H_base = np.atleast_2d(np.asarray(H, dtype=float))
        self.Q_base = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R_base = np.atleast_2d(np.asarray(R, dtype=float))
        self.m0_base = np.atleast_1d(np.asarray(m0, dtype=float))
        self.P0_base = np.atleast_2d(np.asarray(P0, dtype=float))
        self.n = self.A_base.shape[0]
        self.d = self.H_base.shape[0]
        vals = {"a": 1.0, "q": 1.0, "r": 1.0, "p0": 1.0, "bias": 0.0}
        vals.update(values)
        super().__init__(vals, free)

    def _f(self, x, p, k):
        return p["a"] * x @ self.A_base.T

    def _h(self, x, p, k):
        return x @ self.H_base.T + p["bias"]

    def _Q(self, p):
        return p["q"] * self.Q_base

    def _R(self, p):
        return p["r"] * self.R_base

    def _m0(self, p):
        return self.m0_base.copy()

    def _P0(self, p):
        return p["p0"] * self.P0_base

    def _F_x(self, x, p, k):
        return np.broadcast_to(p["a"] * self.A_base, (x.shape[0], self.n, self.n)).copy()

    def _H_x(self, x, p, k):
        return np.broadcast_to(self.H_base, (x.shape[0], self.d, self.n)).copy()

    def _df(self, name, x, p, k):
        if name == "a":
            return x @ self.A_base.T

    def _dh(self, name, x, p, k):
        if name == "bias":
            return np.ones((x.shape[0], self.d))

    def _dQ(self, name, p):
        if name == "q":
            return self.Q_base

    def _dR(self, name, p):
        if name == "r":
            return self.R_base

    def _dP0(self, name, p):
        if name == "p0":
            return self.P0_base

    def affine_measurement(self, theta, k):
        p = self.params(theta)
        return self.H_base, np.full(self.d, p["bias"])

    def matrices(self, theta):
        """``(A, H, Q, R, m0, P0, bias)`` at ``theta``."""
        p = self.params(theta)
        return (
            p["a"] * self.A_base,
            self.H_base,
            self._Q(p),
            self._R(p),
            self._m0(p),
            self._P0(p),
            np.full(self.d, p["bias"]),
        )

    def linear_view(self, theta):
        p = self.params(theta)
        return LinearInParamsModel(
            f_tilde=lambda x, k: x,
            h_tilde=lambda x, k: x,
            A=p["a"] * self.A_base,
            H=self.H_base.copy(),
            Q=self._Q(p),
            R=self._R(p),
            m0=self._m0(p),
            P0=self._P0(p),
        )

    def describe(self):
        out = super().describe()
        out["matrices"] = _jsonable(
            {
                "A": self.A_base,
                "H": self.H_base,
                "Q": self.Q_base,
                "R": self.R_base,
                "m0": self.m0_base,
                "P0": self.P0_base,
            }
        )
        return out


# -- univariate nonstationary growth model ----------------------------------------


class UNGMModel(StateSpaceModel):
    """Univariate growth model with a linear measurement ``y_k = d x_k + r_k``.

    ``x_{k+1} = a x_k + b x_k / (1 + x_k^2) + c cos(1.2 k) + q_k``;
    parameters ``a, b, c, d`` and the variances ``q, r``.
    """

    name = "ungm"
    n = 1
    d = 1
    positive = ("q", "r")

    def __init__(self, a=0.5, b=25.0, c=8.0, d=np.sqrt(0.05), q=10.0, r=0.01, m0=0.0, p0=0.01, free=("a",)):
        super().__init__({"a": a, "b": b, "c": c, "d": d, "q": q, "r": r}, free)
        self.m0_value = float(m0)
        self.p0_value = float(p0)

    def _f(self, x, p, k):
        return p["a"] * x + p["b"] * x / (1.0 + x * x) + p["c"] * np.cos(1.2 * k)

    def _h(self, x, p, k):
        return p["d"] * x

    def _Q(self, p):
        return np.array([[p["q"]]])

    def _R(self, p):
        return np.array([[p["r"]]])

    def _m0(self, p):
        return np.array([self.m0_value])

    def _P0(self, p):
        return np.array([[self.p0_value]])

    def _F_x(self, x, p, k):
        x2 = x * x
        return (p["a"] + p["b"] * (1.0 - x2) / (1.0 + x2) ** 2)[:, :, None]

    def _H_x(self, x, p, k):
        return np.full((x.shape[0], 1, 1), p["d"])

    def _df(self, name, x, p, k):
        if name == "a":
            return x
        if name == "b":
            return x / (1.0 + x * x)
        if name == "c":
            return np.full_like(x, np.cos(1.2 * k))

    def _dh(self, name, x, p, k):
        if name == "d":
            return x

    def _dQ(self, name, p):
        if name == "q":
            return np.ones((1, 1))

    def _dR(self, name, p):
        if name == "r":
            return np.ones((1, 1))

    def affine_measurement(self, theta, k):
        p = self.params(theta)
        return np.array([[p["d"]]]), np.zeros(1)

    def linear_view(self, theta):
        p = self.params(theta)
        return LinearInParamsModel(
            f_tilde=lambda x, k: np.hstack([x, x / (1.0 + x * x), np.full_like(x, np.cos(1.2 * k))]),
            h_tilde=lambda x, k: x,
            A=np.array([[p["a"], p["b"], p["c"]]]),
            H=np.array([[p["d"]]]),
            Q=self._Q(p),
            R=self._R(p),
            m0=self._m0(p),
            P0=self._P0(p),
        )

    _TOKENS = {"a": "A[:,0]", "b": "A[:,1]", "c": "A[:,2]", "d": "H", "q": "Q", "r": "R"}

    def em_tokens(self):
        return {name: self._TOKENS[name] for name in self.free}

    def theta_from_linear(self, lin, theta):
        read = {
            "a": lin.A[0, 0],
            "b": lin.A[0, 1],
            "c": lin.A[0, 2],
            "d": lin.H[0, 0],
            "q": lin.Q[0, 0],
            "r": lin.R[0, 0],
        }
        return np.array([read[name] for name in self.free])

    def describe(self):
        out = super().describe()
        out["m0"] = self.m0_value
        out["p0"] = self.p0_value
        return out


def ungm_model(a=0.5, b=25.0, c=8.0, d=np.sqrt(0.05), q=10.0, r=0.01, free=("a",), **kw) -> UNGMModel:
    if q <= 0 or r <= 0:
        raise ValueError("noise variances q and r must be positive")
    return UNGMModel(a=a, b=b, c=c, d=d, q=q, r=r, free=free, **kw)


# -- coordinated turn with bearings-only sensors ---------------------------------------


class CTModel(StateSpaceModel):
    """Five-state coordinated-turn model observed by bearings-only sensors.

    State ``(x1, x2, v1, v2, omega)``. Free parameters are drawn from the
    sensor noise standard deviations ``r1_std, r2_std, ...`` and the
    process-noise intensities ``qc``, ``qw``.
    """

    name = "ct"
    n = 5

    def __init__(
        self,
        qc=0.1,
        qw=0.1,
        dt=0.01,
        sensors=((-1.0, 0.5), (1.0, 1.0)),
        r_std=(0.05, 0.1),
        m0=(2.0, 0.0, 0.0, 0.0, 0.0),
        P0=(0.25, 0.25, 0.25, 0.25, 1.0),
        free=("r1_std",),
    ):
        if dt <= 0:
            raise ValueError("time step must be positive")
        self.dt = float(dt)
        self.sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
        self.d = self.sensors.shape[0]
        if len(r_std) != self.d:
            raise ValueError("need one noise standard deviation per sensor")
        if any(s <= 0 for s in r_std):
            raise ValueError("sensor noise standard deviations must be positive")
        self.m0_value = np.asarray(m0, dtype=float).copy()
        P0 = np.asarray(P0, dtype=float)
        self.P0_value = np.diag(P0) if P0.ndim == 1 else P0.copy()
        vals = {"qc": float(qc), "qw": float(qw)}
        vals.update({f"r{i + 1}_std": float(s) for i, s in enumerate(r_std)})
        self.positive = tuple(vals)
        super().__init__(vals, free)

    def _rstd(self, p):
        return np.array([p[f"r{i + 1}_std"] for i in range(self.d)])

    def _f(self, x, p, k):
        return kernels.ct_transition(x, self.dt)

    def _h(self, x, p, k):
        dx = x[:, None, 0] - self.sensors[None, :, 0]
        dy = x[:, None, 1] - self.sensors[None, :, 1]
        return np.arctan2(dy, dx)

    def _Q(self, p):
        return self._q_matrix(p["qc"], p["qw"])

    def _q_matrix(self, qc, qw):
        dt = self.dt
        Q = np.zeros((5, 5))
        Q[0, 0] = Q[1, 1] = qc * dt**3 / 3.0
        Q[0, 2] = Q[2, 0] = Q[1, 3] = Q[3, 1] = qc * dt**2 / 2.0
        Q[2, 2] = Q[3, 3] = qc * dt
        Q[4, 4] = qw * dt
        return Q

    def _R(self, p):
        return np.diag(self._rstd(p) ** 2)

    def _m0(self, p):
        return self.m0_value.copy()

    def _P0(self, p):
        return self.P0_value.copy()

    def transition_matrix(self, omega):
        """The 5x5 transition matrix at turn rate ``omega``."""
        F = np.eye(5)
        x = np.zeros((1, 5))
        for j in range(4):
            x[:] = 0.0
            x[0, j] = 1.0
            x[0, 4] = omega
            F[:4, j] = kernels.ct_transition(x, self.dt)[0, :4]
        return F

    def _F_x(self, x, p, k):
        dt = self.dt
        v1, v2, w = x[:, 2], x[:, 3], x[:, 4]
        wdt = w * dt
        s, c = np.sin(wdt), np.cos(wdt)
        small = np.abs(wdt) < kernels.CT_SERIES_THRESHOLD
        sw = np.where(small, 1.0, w)
        a = np.where(small, dt - w * w * dt**3 / 6.0, s / sw)
        b = np.where(small, -w * dt * dt / 2.0 + w**3 * dt**4 / 24.0, (c - 1.0) / sw)
        da = np.where(small, -w * dt**3 / 3.0, (dt * c * sw - s) / sw**2)
        db = np.where(small, -dt * dt / 2.0 + w * w * dt**4 / 8.0, (-dt * s * sw - (c - 1.0)) / sw**2)
        J = np.zeros((x.shape[0], 5, 5))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        J[:, 4, 4] = 1.0
        J[:, 0, 2], J[:, 0, 3], J[:, 0, 4] = a, b, da * v1 + db * v2
        J[:, 1, 2], J[:, 1, 3], J[:, 1, 4] = -b, a, -db * v1 + da * v2
        J[:, 2, 2], J[:, 2, 3], J[:, 2, 4] = c, -s, -dt * s * v1 - dt * c * v2
        J[:, 3, 2], J[:, 3, 3], J[:, 3, 4] = s, c, dt * c * v1 - dt * s * v2
        return J

    def _H_x(self, x, p, k):
        dx = x[:, None, 0] - self.sensors[None, :, 0]
        dy = x[:, None, 1] - self.sensors[None, :, 1]
        r2 = dx * dx + dy * dy
        J = np.zeros((x.shape[0], self.d, 5))
        J[:, :, 0] = -dy / r2
        J[:, :, 1] = dx / r2
        return J

    def _dQ(self, name, p):
        if name == "qc":
            return self._q_matrix(1.0, 0.0)
        if name == "qw":
            return self._q_matrix(0.0, 1.0)

    def _dR(self, name, p):
        if name.startswith("r") and name.endswith("_std"):
            i = int(name[1:-4]) - 1
            out = np.zeros((self.d, self.d))
            out[i, i] = 2.0 * p[name]
            return out

    def residual(self, v):
        return wrap_angle(v)

    def em_tokens(self):
        out = {}
        for name in self.free:
            if not (name.startswith("r") and name.endswith("_std")):
                return None
            out[name] = f"R[{int(name[1:-4]) - 1}]"
        return out

    def theta_from_linear(self, lin, theta):
        return np.array([np.sqrt(lin.R[int(name[1:-4]) - 1, int(name[1:-4]) - 1]) for name in self.free])

    def linear_view(self, theta):
        """Linear-in-parameters form with ``A = I`` and ``H = I``; ``R`` diagonal."""
        p = self.params(theta)
        return LinearInParamsModel(
            f_tilde=lambda x, k: kernels.ct_transition(x, self.dt),
            h_tilde=lambda x, k: self._h(x, p, k),
            A=np.eye(5),
            H=np.eye(self.d),
            Q=self._Q(p),
            R=self._R(p),
            m0=self._m0(p),
            P0=self._P0(p),
            residual=wrap_angle,
        )

    def describe(self):
        out = super().describe()
        out.update(
            dt=self.dt,
            sensors=_jsonable(self.sensors),
            m0=_jsonable(self.m0_value),
            P0=_jsonable(self.P0_value),
        )
        return out


def ct_model(qc=0.1, qw=0.1, dt=0.01, sensors=((-1.0, 0.5), (1.0, 1.0)), R_diag=None, r_std=None, **kw) -> CTModel:
    """Coordinated-turn model; noise given either as ``R_diag`` variances or ``r_std``."""
    if R_diag is not None:
        if any(v <= 0 for v in R_diag):
            raise ValueError("R_diag entries must be positive")
        r_std = tuple(float(np.sqrt(v)) for v in R_diag)
    if r_std is None:
        r_std = (0.05, 0.1)
    return CTModel(qc=qc, qw=qw, dt=dt, sensors=sensors, r_std=r_std, **kw)


def initial_uncertainty_sweep(model: CTModel, sigma: float, x0_true) -> CTModel:
    """Shrink the location prior to standard deviation ``sigma``.

    The first two entries of ``m0`` move linearly from the original prior
    mean (``sigma = 0.5``) to the true initial location (``sigma -> 0``).
    """
    if not 0.0 < sigma <= 0.5:
        raise ValueError(f"sigma must lie in (0, 0.5], got {sigma}")
    out = model._copy()
    t = sigma / 0.5
    x0 = np.asarray(x0_true, dtype=float)
    out.m0_value = model.m0_value.copy()
    out.m0_value[:2] = t * model.m0_value[:2] + (1.0 - t) * x0[:2]
    out.P0_value = model.P0_value.copy()
    out.P0_value[0, 0] = out.P0_value[1, 1] = sigma**2
    return out


# -- linear-in-parameters view ----------------------------------------------


@dataclass
class LinearInParamsModel:
    """``x_k = A f~(x_{k-1}) + q_k``, ``y_k = H h~(x_k) + r_k``.

    ``f_tilde(x, k)`` and ``h_tilde(x, k)`` are vectorized feature maps
    returning (N, nf) and (N, nh) arrays; ``k`` is the time index of ``x``
    for ``h_tilde`` and of the source state for ``f_tilde``.
    """

    f_tilde: Callable
    h_tilde: Callable
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray
    residual: Optional[Callable] = None
    free: frozenset = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[0]

    def replace(self, **kw) -> "LinearInParamsModel":
        return replace(self, **kw)

    def as_model(self) -> StateSpaceModel:
        return _LinearInParamsStateModel(self)


class _LinearInParamsStateModel(StateSpaceModel):
    name = "linear-in-params"

    def __init__(self, lin: LinearInParamsModel):
        self.lin = lin
        self.n = lin.n
        self.d = lin.d
        super().__init__({}, ())

    def _f(self, x, p, k):
        return self.lin.f_tilde(x, k) @ self.lin.A.T

    def _h(self, x, p, k):
        return self.lin.h_tilde(x, k) @ self.lin.H.T

    def _Q(self, p):
        return self.lin.Q

    def _R(self, p):
        return self.lin.R

    def _m0(self, p):
        return self.lin.m0

    def _P0(self, p):
        return self.lin.P0

    def residual(self, v):
        return v if self.lin.residual is None else self.lin.residual(v)


# -- simulation ----------------------------------------------------------------

_ROLE_INITIAL, _ROLE_PROCESS, _ROLE_MEASUREMENT = 0, 1, 2


@dataclass
class SimOutput:
    states: np.ndarray  # (T+1, n), row k is x_k
    measurements: np.ndarray  # (T, d), row k-1 is y_k
    seed: int
    trajectory: int = 0

    @property
    def T(self) -> int:
        return len(self.measurements)


def _rng(seed: int, trajectory: int, role: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trajectory), role])))


def psd_sqrt(P):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (P + P.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate(model: StateSpaceModel, theta, T: int, seed: int, trajectory: int = 0) -> SimOutput:
    """Draw one trajectory. Noise streams are keyed by ``(seed, trajectory, role)``."""
    if T < 0:
        raise ValueError("T must be non-negative")
    theta = np.asarray(theta, dtype=float)
    n, d = model.n, model.d
    LQ = psd_sqrt(model.Q(theta))
    LR = psd_sqrt(model.R(theta))
    L0 = psd_sqrt(model.P0(theta))
    z0 = _rng(seed, trajectory, _ROLE_INITIAL).standard_normal(n)
    zq = _rng(seed, trajectory, _ROLE_PROCESS).standard_normal((T, n))
    zr = _rng(seed, trajectory, _ROLE_MEASUREMENT).standard_normal((T, d))
    xs = np.empty((T + 1, n))
    ys = np.empty((T, d))
    xs[0] = model.m0(theta) + L0 @ z0
    for k in range(1, T + 1):
        xs[k] = model.f(xs[k - 1][None, :], theta, k - 1)[0] + LQ @ zq[k - 1]
        ys[k - 1] = model.h(xs[k][None, :], theta, k)[0] + LR @ zr[k - 1]
    return SimOutput(xs, ys, int(seed), int(trajectory))


def save_sim(sim: SimOutput, path, meta: Optional[dict] = None) -> None:
    """Write ``path`` (CSV) and ``path`` with suffix ``.json`` (sidecar)."""
    path = Path(path)
    n = sim.states.shape[1]
    d = sim.measurements.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(d)])
        for k in range(sim.T + 1):
            ys = [""] * d if k == 0 else [fmt(v) for v in sim.measurements[k - 1]]
            w.writerow([k] + [fmt(v) for v in sim.states[k]] + ys)
    sidecar = {"seed": sim.seed, "trajectory": sim.trajectory, "T": sim.T}
    if meta:
        sidecar.update(meta)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_sim(path) -> SimOutput:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for h in header if h.startswith("x"))
    d = sum(1 for h in header if h.startswith("y"))
    states = np.array([[float(v) for v in r[1 : 1 + n]] for r in rows[1:]])
    ys = np.array([[float(v) for v in r[1 + n : 1 + n + d]] for r in rows[2:]]).reshape(-1, d)
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return SimOutput(states, ys, int(meta.get("seed", 0)), int(meta.get("trajectory", 0)))
