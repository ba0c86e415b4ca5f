"""Inner-loop kernels, compiled when available.

The Cython extension ``sigmaest._core`` is used if it imports; otherwise
the numpy versions in ``sigmaest._kernels_py`` are used. Setting the
environment variable ``SIGMAEST_PURE_PYTHON=1`` forces the fallback.
``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _kernels_py

CT_SERIES_THRESHOLD = _kernels_py.CT_SERIES_THRESHOLD

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("SIGMAEST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def sigma_moments(Y, wm, wc):
    return _impl.sigma_moments(_c(Y), _c(wm), _c(wc))


def weighted_cross(A, B, w):
    # a single BLAS product beats the compiled loop here (see benchmarks/)
    return _kernels_py.weighted_cross(_c(A), _c(B), _c(w))


def weighted_cross_batch(A, B, w):
    return _impl.weighted_cross_batch(_c(A), _c(B), _c(w))


def systematic_resample(weights, u):
    return _impl.systematic_resample(_c(weights), float(u))


def ct_transition(X, dt):
    return _impl.ct_transition(_c(X), float(dt))
