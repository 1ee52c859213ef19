"""Compiled vs pure-Python integrator on the model field.

    python benchmarks/bench_kernels.py [--repeat 5]

Times unit-time flow evaluations (with and without the variational
equations) and a full level hit from a small height, and checks that the
two backends agree.
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from shilnikov import kernels
from shilnikov.geometry import StabilityParams

P = StabilityParams(-1.0, math.pi, 1.5)
FIELD = (P.sigma, P.mu, P.u, 1.0, 1.0)


def _time(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["compiled"] = kernels.compiled_backend
    x0 = np.array([0.6, -0.3, 0.2])
    times = np.linspace(0.0, 1.0, 11)
    start = np.array([math.cos(0.3), math.sin(0.3), 1e-6])
    cases = {
        "flow (11 samples)": lambda k: k.flow(FIELD, x0, times, 1e-12, 1e-300, 10**6, False)[1],
        "flow + variational": lambda k: k.flow(FIELD, x0, times, 1e-12, 1e-300, 10**6, True)[1],
        "level hit from 1e-6": lambda k: np.asarray(k.level_hit(FIELD, start, 1.0, 1000.0, 1e-12, 1e-300, 10**6)[2]),
    }
    print(f"{'case':<24}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for name, fn in cases.items():
        res = {b: _time(lambda: fn(k), args.repeat) for b, k in backends.items()}
        line = f"{name:<24}" + "".join(f"{res[b][0] * 1e3:>12.3f}ms" for b in backends)
        if "compiled" in res:
            diff = float(np.max(np.abs(res["compiled"][1] - res["python"][1])))
            line += f"{res['python'][0] / res['compiled'][0]:>9.1f}x{diff:>12.2e}"
        print(line)


if __name__ == "__main__":
    main()
