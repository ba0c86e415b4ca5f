"""Compare the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
inputs of the size met in the coordinated-turn study (5-D state, 10-D
pairwise rules) and in the particle filter (10^4 particles). A full
sigma-point filter pass is timed with each backend as well.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sigmaest import _kernels_py
from sigmaest.cubature import build_rule

try:
    from sigmaest import _core
except ImportError:  # pragma: no cover
    _core = None


def _cases(rng):
    rule5 = build_rule("gh(5)", 5)
    rule10 = build_rule("sym7", 10)
    Y = rng.standard_normal((rule5.size, 5))
    Z = rng.standard_normal((rule10.size, 10))
    X = rng.standard_normal((rule10.size, 5))
    X[:, 4] *= 0.5
    w = rng.random(10_000)
    w /= w.sum()
    dA = np.ascontiguousarray(rng.standard_normal((4, rule5.size, 5)))
    return {
        "sigma_moments (3125x5)": ("sigma_moments", (Y, rule5.mean_weights, rule5.cov_weights)),
        "weighted_cross (1361x10)": ("weighted_cross", (Z, Z, rule10.mean_weights)),
        "weighted_cross_batch (4x3125x5)": ("weighted_cross_batch", (dA, Y, rule5.mean_weights)),
        "systematic_resample (1e4)": ("systematic_resample", (w, 0.37)),
        "ct_transition (1361x5)": ("ct_transition", (X, 0.01)),
    }


def bench_kernels(repeat: int) -> list:
    rng = np.random.default_rng(0)
    rows = []
    for label, (name, args) in _cases(rng).items():
        py = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*args), number=repeat, repeat=3)) / repeat
        if _core is not None:
            cy = min(timeit.repeat(lambda: getattr(_core, name)(*args), number=repeat, repeat=3)) / repeat
            ref = getattr(_kernels_py, name)(*args)
            got = getattr(_core, name)(*args)
            ref = ref if isinstance(ref, tuple) else (ref,)
            got = got if isinstance(got, tuple) else (got,)
            err = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float)))) for a, b in zip(ref, got))
        else:
            cy, err = float("nan"), float("nan")
        rows.append((label, py, cy, err))
    return rows


_FILTER_SNIPPET = """
import time, numpy as np
from sigmaest import kernels, models, gauss, cubature
m = models.ct_model()
sim = models.simulate(m, m.theta0, 50, 0)
rule = cubature.build_rule("sym5", 5)
gauss.filter_pass(m, m.theta0, sim.measurements, rule)
t = time.perf_counter()
for _ in range({reps}):
    gauss.filter_pass(m, m.theta0, sim.measurements, rule)
print(kernels.BACKEND, (time.perf_counter() - t) / {reps})
"""


def bench_filter(reps: int) -> list:
    out = []
    for pure in ("0", "1"):
        env = dict(os.environ, SIGMAEST_PURE_PYTHON=pure)
        res = subprocess.run(
            [sys.executable, "-c", _FILTER_SNIPPET.format(reps=reps)], env=env, capture_output=True, text=True, check=True
        )
        backend, secs = res.stdout.split()
        out.append((backend, float(secs)))
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--filter-reps", type=int, default=20)
    args = parser.parse_args(argv)
    print(f"{'kernel':34s} {'numpy [us]':>12s} {'cython [us]':>12s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, py, cy, err in bench_kernels(args.repeat):
        print(f"{label:34s} {py * 1e6:12.2f} {cy * 1e6:12.2f} {py / cy:8.2f} {err:11.2e}")
    print()
    print("coordinated-turn sym5 filter pass, T=50")
    for backend, secs in bench_filter(args.filter_reps):
        print(f"  {backend:8s} {secs * 1e3:8.2f} ms")


if __name__ == "__main__":
    main()
