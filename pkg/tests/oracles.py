"""Independent reference implementations used only by the tests.

Nothing here imports from ``sigmaest``; every routine is written directly
from textbook linear-Gaussian algebra.
"""
import itertools
import math

import numpy as np


def gaussian_moment(alpha):
    """E[prod x_i^alpha_i] for x ~ N(0, I): product of (a-1)!! over even a, 0 if any is odd."""
    out = 1
    for a in alpha:
        if a % 2:
            return 0.0
        out *= math.prod(range(a - 1, 0, -2)) if a else 1
    return float(out)


def monomials(n, degree):
    """All exponent tuples with total degree <= ``degree``."""
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            yield tuple(alpha)


def kalman(A, H, Q, R, m0, P0, y, b=None):
    """Textbook Kalman filter. Returns filtered means, covs, predicted means, covs, loglik."""
    n = A.shape[0]
    d = H.shape[0]
    b = np.zeros(d) if b is None else b
    m, P = m0.copy(), P0.copy()
    ms, Ps, mp, Pp = [], [], [], []
    ll = 0.0
    for yk in y:
        m = A @ m
        P = A @ P @ A.T + Q
        mp.append(m)
        Pp.append(P)
        S = H @ P @ H.T + R
        v = yk - H @ m - b
        Si = np.linalg.inv(S)
        K = P @ H.T @ Si
        m = m + K @ v
        P = P - K @ S @ K.T
        P = 0.5 * (P + P.T)
        sign, logdet = np.linalg.slogdet(2 * np.pi * S)
        ll += -0.5 * logdet - 0.5 * v @ Si @ v
        ms.append(m)
        Ps.append(P)
    return np.array(ms).reshape(-1, n), np.array(Ps).reshape(-1, n, n), mp, Pp, ll


def rts(A, Q, m0, P0, ms, Ps):
    """RTS smoother over times 0..T given filtered moments of 1..T.

    Returns smoothed means (T+1, n), covs (T+1, n, n) and gains G_k for k = 0..T-1.
    """
    T = len(ms)
    fm = [m0] + list(ms)
    fP = [P0] + list(Ps)
    sm = [None] * (T + 1)
    sP = [None] * (T + 1)
    G = [None] * T
    sm[T], sP[T] = fm[T], fP[T]
    for k in range(T - 1, -1, -1):
        mp = A @ fm[k]
        Pp = A @ fP[k] @ A.T + Q
        G[k] = fP[k] @ A.T @ np.linalg.inv(Pp)
        sm[k] = fm[k] + G[k] @ (sm[k + 1] - mp)
        sP[k] = fP[k] + G[k] @ (sP[k + 1] - Pp) @ G[k].T
    return np.array(sm), np.array(sP), G


def lag_one_cov(sP, G, k):
    """Cov(x_k, x_{k-1} | y_{1:T}) = P_{k|T} G_{k-1}^T."""
    return sP[k] @ G[k - 1].T


def batch_loglik(A, H, Q, R, m0, P0, y, b=None):
    """Log-likelihood from the joint Gaussian of all measurements (no recursion)."""
    n = A.shape[0]
    d = H.shape[0]
    T = len(y)
    b = np.zeros(d) if b is None else b
    # x_k = A^k x0 + sum A^{k-j} q_j
    mean = np.zeros(T * d)
    cov_x = {}
    Ak = [np.linalg.matrix_power(A, k) for k in range(T + 1)]
    for k in range(1, T + 1):
        mean[(k - 1) * d : k * d] = H @ Ak[k] @ m0 + b
    cov = np.zeros((T * d, T * d))
    for i in range(1, T + 1):
        for j in range(1, T + 1):
            c = Ak[i] @ P0 @ Ak[j].T
            for s in range(1, min(i, j) + 1):
                c = c + Ak[i - s] @ Q @ Ak[j - s].T
            cov_x[(i, j)] = c
            cov[(i - 1) * d : i * d, (j - 1) * d : j * d] = H @ c @ H.T
    cov += np.kron(np.eye(T), R)
    r = np.asarray(y).reshape(-1) - mean
    sign, logdet = np.linalg.slogdet(2 * np.pi * cov)
    return float(-0.5 * logdet - 0.5 * r @ np.linalg.solve(cov, r))


def linear_em_statistics(A, sm, sP, G, y):
    """Exact linear-Gaussian EM sufficient statistics with identity feature maps."""
    T = len(y)
    n = sm.shape[1]
    Sigma = np.zeros((n, n))
    Phi = np.zeros((n, n))
    C = np.zeros((n, n))
    for k in range(1, T + 1):
        Sigma += sP[k] + np.outer(sm[k], sm[k])
        Phi += sP[k - 1] + np.outer(sm[k - 1], sm[k - 1])
        C += sP[k] @ G[k - 1].T + np.outer(sm[k], sm[k - 1])
    Y = np.asarray(y)
    B = sum(np.outer(Y[k - 1], sm[k]) for k in range(1, T + 1))
    D = Y.T @ Y
    return Sigma / T, Phi / T, Sigma / T, B / T, C / T, D / T


def random_linear_system(seed, n=3, d=2, T=50):
    """Stable random (A, H, Q, R, m0, P0) and a measurement sequence drawn from it."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A *= 0.95 / max(abs(np.linalg.eigvals(A)))
    H = rng.normal(size=(d, n))
    B = rng.normal(size=(n, n))
    Q = 0.1 * (B @ B.T) + 0.05 * np.eye(n)
    C = rng.normal(size=(d, d))
    R = 0.1 * (C @ C.T) + 0.1 * np.eye(d)
    m0 = rng.normal(size=n)
    P0 = np.eye(n)
    x = m0 + np.linalg.cholesky(P0) @ rng.normal(size=n)
    ys = []
    for _ in range(T):
        x = A @ x + np.linalg.cholesky(Q) @ rng.normal(size=n)
        ys.append(H @ x + np.linalg.cholesky(R) @ rng.normal(size=d))
    return A, H, Q, R, m0, P0, np.array(ys).reshape(T, d)


def richardson_derivative(fun, x, h=1e-3):
    """Fourth-order central difference of a scalar function."""
    return (8 * (fun(x + h) - fun(x - h)) - (fun(x + 2 * h) - fun(x - 2 * h))) / (12 * h)
