"""Unit sigma-point sets for Gaussian integrals.

A rule is a set of unit points ``xi_i`` and weights ``w_i`` such that

    E[g(x)] ~= sum_i w_i g(m + L xi_i),   x ~ N(m, L L^T).

Supported schemes are the unscented transform, fully symmetric rules of
degree 3, 5, 7 and 9, and tensor-product Gauss-Hermite rules. Scheme
strings follow a small grammar: ``ut(alpha,beta,kappa)``, ``sym3``,
``sym5``, ``sym7``, ``sym9`` and ``gh(p)``.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np

__all__ = [
    "UT",
    "Symmetric",
    "GaussHermite",
    "SchemeSpec",
    "CubatureRule",
    "SingularMomentSystem",
    "parse_scheme",
    "build_rule",
    "point_count",
    "expect",
    "sigma_points",
    "solve_symmetric_weights",
    "gauss_hermite_1d",
]


class SingularMomentSystem(ValueError):
    """The moment equations for a symmetric rule could not be solved exactly."""


@dataclass(frozen=True)
class UT:
    alpha: float = 1.0
    beta: float = 0.0
    kappa: float = 0.0

    def __str__(self) -> str:
        return f"ut({self.alpha:g},{self.beta:g},{self.kappa:g})"


@dataclass(frozen=True)
class Symmetric:
    order: int

    def __post_init__(self):
        if self.order not in (3, 5, 7, 9):
            raise ValueError(f"unsupported symmetric order {self.order}; use 3, 5, 7 or 9")

    def __str__(self) -> str:
        return f"sym{self.order}"


@dataclass(frozen=True)
class GaussHermite:
    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"Gauss-Hermite order must be a positive integer, got {self.p}")

    def __str__(self) -> str:
        return f"gh({self.p})"


SchemeSpec = Union[UT, Symmetric, GaussHermite]

_NUM = r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*"
_UT_RE = re.compile(rf"^ut\({_NUM},{_NUM},{_NUM}\)$")
_GH_RE = re.compile(r"^gh\(\s*(\d+)\s*\)$")
_SYM_RE = re.compile(r"^sym(\d+)$")


def parse_scheme(text: str) -> SchemeSpec:
    """Parse a scheme string such as ``"sym5"`` or ``"ut(1,0,0)"``."""
    s = text.strip().lower()
    if s == "ut":
        return UT()
    m = _UT_RE.match(s)
    if m:
        return UT(*(float(g) for g in m.groups()))
    m = _SYM_RE.match(s)
    if m:
        return Symmetric(int(m.group(1)))
    m = _GH_RE.match(s)
    if m:
        return GaussHermite(int(m.group(1)))
    raise ValueError(f"cannot parse cubature scheme {text!r}")


@dataclass(frozen=True, eq=False)
class CubatureRule:
    """Unit sigma-points and weights for an ``dim``-dimensional standard normal.

    ``points`` has shape ``(N, dim)``. ``cov_weights`` differ from
    ``mean_weights`` only for the unscented transform.
    """

    dim: int
    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    degree: int
    spec: SchemeSpec = field(default=None)

    def __post_init__(self):
        for arr in (self.points, self.mean_weights, self.cov_weights):
            arr.setflags(write=False)
        if not (len(self.points) == len(self.mean_weights) == len(self.cov_weights)):
            raise ValueError("points and weights must have equal length")

    @property
    def size(self) -> int:
        return len(self.points)

    def __repr__(self) -> str:
        return f"CubatureRule({self.spec}, dim={self.dim}, points={self.size})"


def point_count(spec: SchemeSpec, n: int) -> int:
    """Number of sigma-points of ``spec`` in ``n`` dimensions (closed form)."""
    _check_dim(n)
    if isinstance(spec, UT):
        return 2 * n + 1
    if isinstance(spec, GaussHermite):
        return spec.p**n
    if isinstance(spec, Symmetric):
        if spec.order == 3:
            return 2 * n
        if spec.order == 5:
            return 2 * n * n + 1
        if spec.order == 7:
            return (4 * n**3 + 8 * n + 3) // 3
        return (2 * n**4 - 4 * n**3 + 22 * n**2 - 8 * n + 3) // 3
    raise TypeError(f"not a scheme spec: {spec!r}")


def build_rule(spec: SchemeSpec | str, n: int) -> CubatureRule:
    """Construct the unit rule for ``spec`` in dimension ``n`` (cached)."""
    if isinstance(spec, str):
        spec = parse_scheme(spec)
    _check_dim(n)
    return _build_rule_cached(spec, int(n))


@lru_cache(maxsize=None)
def _build_rule_cached(spec: SchemeSpec, n: int) -> CubatureRule:
    if isinstance(spec, UT):
        return _ut_rule(spec, n)
    if isinstance(spec, GaussHermite):
        return _gh_rule(spec, n)
    if isinstance(spec, Symmetric):
        gens, weights = solve_symmetric_weights(n, spec.order)
        pts, w = [], []
        for gen, wt in zip(gens, weights):
            orb = _orbit(gen, n)
            pts.append(orb)
            w.append(np.full(len(orb), wt))
        points = np.vstack(pts)
        weights_ = np.concatenate(w)
        return CubatureRule(n, points, weights_, weights_.copy(), spec.order, spec)
    raise TypeError(f"not a scheme spec: {spec!r}")


def _check_dim(n) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n}")


def _ut_rule(spec: UT, n: int) -> CubatureRule:
    lam = spec.alpha**2 * (n + spec.kappa) - n
    if abs(n + lam) < 1e-14:
        raise ValueError("unscented transform with n + lambda = 0 has singular weights")
    r = np.sqrt(n + lam)
    eye = np.eye(n)
    points = np.vstack([np.zeros(n), r * eye, -r * eye])
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wm[0] = lam / (n + lam)
    wc = wm.copy()
    wc[0] += 1.0 - spec.alpha**2 + spec.beta
    return CubatureRule(n, points, wm, wc, 3, spec)


def gauss_hermite_1d(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``p``-point rule for N(0, 1).

    Eigen-decomposition of the Jacobi matrix of the probabilists' Hermite
    polynomials (Golub-Welsch).
    """
    if p == 1:
        return np.zeros(1), np.ones(1)
    off = np.sqrt(np.arange(1, p, dtype=float))
    J = np.diag(off, 1) + np.diag(off, -1)
    nodes, vecs = np.linalg.eigh(J)
    weights = vecs[0, :] ** 2
    # exact symmetry: eigh leaves ~1e-15 asymmetry in the nodes
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights /= weights.sum()
    return nodes, weights


def _gh_rule(spec: GaussHermite, n: int) -> CubatureRule:
    x, w = gauss_hermite_1d(spec.p)
    points = np.array(list(itertools.product(x, repeat=n)), dtype=float).reshape(-1, n)
    weights = np.prod(np.array(list(itertools.product(w, repeat=n))).reshape(-1, n), axis=1)
    return CubatureRule(n, points, weights, weights.copy(), 2 * spec.p - 1, spec)


# -- fully symmetric rules -------------------------------------------------

# squared axis radii; order 7 and 9 radii are the roots of t^2 - 6t + 3 and
# t^2 - 10t + 15 forced by the one-dimensional moment equations
_RADII_SQ = {
    5: (3.0,),
    7: (3.0 + np.sqrt(6.0), 3.0 - np.sqrt(6.0)),
    9: (5.0 + np.sqrt(10.0), 5.0 - np.sqrt(10.0)),
}


def _generators(n: int, order: int) -> list[tuple[float, ...]]:
    if order == 3:
        return [(float(np.sqrt(n)),)]
    if order == 5:
        (t,) = _RADII_SQ[5]
        u = float(np.sqrt(t))
        return [()] + [(u,)] + ([(u, u)] if n >= 2 else [])
    lam, mu = (float(np.sqrt(t)) for t in _RADII_SQ[order])
    gens: list[tuple[float, ...]] = [(), (lam,), (mu,)]
    if order == 7:
        if n >= 2:
            gens += [(lam, lam), (mu, mu)]
        if n >= 3:
            gens += [(lam, lam, lam)]
        return gens
    if n >= 2:
        gens += [(lam, lam), (mu, mu), (lam, mu)]
    if n >= 3:
        gens += [(lam, lam, lam), (mu, mu, mu)]
    if n >= 4:
        gens += [(lam, lam, lam, lam)]
    return gens


def _orbit(gen: tuple[float, ...], n: int) -> np.ndarray:
    """All points obtained from ``gen`` by coordinate permutation and sign flips."""
    if not gen:
        return np.zeros((1, n))
    seen = {}
    for pos in itertools.permutations(range(n), len(gen)):
        for signs in itertools.product((1.0, -1.0), repeat=len(gen)):
            x = [0.0] * n
            for p, g, s in zip(pos, gen, signs):
                x[p] = s * g
            seen.setdefault(tuple(x), None)
    return np.array(sorted(seen, reverse=True), dtype=float)


def _even_partitions(n: int, degree: int):
    """Sorted exponent tuples with even entries and total degree <= ``degree``."""
    out = []
    for k in range(0, min(n, degree // 2) + 1):
        for parts in itertools.combinations_with_replacement(range(2, degree + 1, 2), k):
            if sum(parts) <= degree:
                out.append(tuple(sorted(parts, reverse=True)))
    return sorted(set(out))


def _normal_moment(parts) -> float:
    out = 1.0
    for a in parts:
        out *= float(np.prod(np.arange(a - 1, 0, -2))) if a else 1.0
    return out


def solve_symmetric_weights(n: int, order: int) -> tuple[list[tuple[float, ...]], np.ndarray]:
    """Generators and per-orbit weights of the fully symmetric rule.

    The generator radii are fixed in closed form and the orbit weights
    are the solution of the even-moment equations of N(0, I) up to
    ``order``. Raises :class:`SingularMomentSystem` when the equations are
    rank deficient or inconsistent.
    """
    _check_dim(n)
    if order not in (3, 5, 7, 9):
        raise ValueError(f"unsupported symmetric order {order}")
    gens = _generators(n, order)
    orbits = [_orbit(g, n) for g in gens]
    rows, rhs = [], []
    for parts in _even_partitions(n, order - 1):
        expo = np.zeros(n)
        expo[: len(parts)] = parts
        rows.append([np.sum(np.prod(o**expo, axis=1)) for o in orbits])
        rhs.append(_normal_moment(parts))
    A = np.array(rows)
    b = np.array(rhs)
    w, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < len(gens):
        raise SingularMomentSystem(f"moment system for sym{order} in {n}-D has rank {rank} < {len(gens)}")
    resid = np.max(np.abs(A @ w - b) / np.maximum(1.0, np.abs(b)))
    if resid > 1e-9:
        raise SingularMomentSystem(f"moment system for sym{order} in {n}-D is inconsistent (residual {resid:.2e})")
    return gens, w


# -- evaluation ------------------------------------------------------------


def sigma_points(rule: CubatureRule, m: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Sigma-points ``m + L xi_i`` as an ``(N, n)`` array."""
    m = np.asarray(m, dtype=float)
    L = np.asarray(L, dtype=float)
    if m.shape != (rule.dim,) or L.shape != (rule.dim, rule.dim):
        raise ValueError(
            f"dimension mismatch: rule dim {rule.dim}, mean {m.shape}, factor {L.shape}"
        )
    return m + rule.points @ L.T


def expect(
    rule: CubatureRule,
    m: np.ndarray,
    L: np.ndarray,
    g: Callable[[np.ndarray], np.ndarray],
    cov_weights: bool = False,
) -> np.ndarray:
    """Approximate ``E[g(x)]`` for ``x ~ N(m, L L^T)``.

    ``g`` is evaluated once on the stacked ``(N, n)`` sigma-points and must
    return an array with leading dimension ``N``.
    """
    X = sigma_points(rule, m, L)
    G = np.asarray(g(X), dtype=float)
    if G.shape[0] != rule.size:
        raise ValueError("integrand must return one row per sigma-point")
    w = rule.cov_weights if cov_weights else rule.mean_weights
    return np.tensordot(w, G, axes=(0, 0))
