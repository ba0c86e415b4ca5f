"""Pure numpy implementations of the inner-loop kernels.

These mirror ``_core.pyx`` one-to-one and are used whenever the compiled
extension is unavailable or ``SIGMAEST_PURE_PYTHON=1`` is set.
"""
import numpy as np

# below this turn-rate magnitude the coordinated-turn matrix uses its series form
CT_SERIES_THRESHOLD = 1e-4


def sigma_moments(Y, wm, wc):
    """Weighted mean (``wm``) and covariance (``wc``) of the rows of ``Y``."""
    mean = wm @ Y
    D = Y - mean
    cov = (D * wc[:, None]).T @ D
    return mean, cov


def weighted_cross(A, B, w):
    """``sum_i w_i A_i B_i^T`` for row-stacked ``A`` (N, p) and ``B`` (N, q)."""
    return (A * w[:, None]).T @ B


def weighted_cross_batch(A, B, w):
    """Batched ``weighted_cross`` over the leading axis of ``A`` (m, N, p)."""
    return np.einsum("j,ijp,jq->ipq", w, A, B, optimize=True)


def systematic_resample(weights, u):
    """Systematic resampling indices for normalized ``weights`` and offset ``u`` in [0, 1)."""
    n = len(weights)
    positions = (u + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right").astype(np.int64)


def ct_transition(X, dt):
    """Coordinated-turn transition applied row-wise to ``X`` (N, 5)."""
    x1, x2, v1, v2, w = X.T
    wdt = w * dt
    small = np.abs(wdt) < CT_SERIES_THRESHOLD
    s = np.sin(wdt)
    c = np.cos(wdt)
    safe_w = np.where(small, 1.0, w)
    # series: sin(w dt)/w ~ dt - w^2 dt^3/6, (cos(w dt)-1)/w ~ -w dt^2/2 + w^3 dt^4/24
    a = np.where(small, dt - w * w * dt**3 / 6.0, s / safe_w)
    b = np.where(small, -w * dt * dt / 2.0 + w**3 * dt**4 / 24.0, (c - 1.0) / safe_w)
    out = np.empty_like(X)
    out[:, 0] = x1 + a * v1 + b * v2
    out[:, 1] = x2 - b * v1 + a * v2
    out[:, 2] = c * v1 - s * v2
    out[:, 3] = s * v1 + c * v2
    out[:, 4] = w
    return out
