"""Pure-Python model-field kernels with the same interface as ``_kernels``."""
from __future__ import annotations

import math

import numpy as np

from . import integrate


def cutoff(r: float, radius: float):
    """C1 cubic cutoff: 1 on [0, R], 0 beyond 2R.  Returns (value, derivative)."""
    if r <= radius:
        return 1.0, 0.0
    if r >= 2.0 * radius:
        return 0.0, 0.0
    s = (r - radius) / radius
    return 1.0 - 3.0 * s * s + 2.0 * s ** 3, (-6.0 * s + 6.0 * s * s) / radius


def make_rhs(p: tuple, var: bool):
    sigma, mu, u, cq, radius = p

    def rhs(y):
        x1, x2, x3 = y[0], y[1], y[2]
        r = math.sqrt(x1 * x1 + x2 * x2 + x3 * x3)
        chi, dchi = cutoff(r, radius)
        g = cq * x3 * x3 * chi
        f = np.empty(y.shape[0])
        f[0] = sigma * x1 + mu * x2 - g * x2
        f[1] = -mu * x1 + sigma * x2 + g * x1
        f[2] = u * x3
        if not var:
            return f
        if r > 0.0:
            dg = cq * x3 * x3 * dchi * y[:3] / r
        else:
            dg = np.zeros(3)
        dg[2] += 2.0 * cq * x3 * chi
        D = np.zeros((3, 3))
        D[0] = -x2 * dg
        D[1] = x1 * dg
        D[0, 0] += sigma
        D[0, 1] += mu - g
        D[1, 0] += -mu + g
        D[1, 1] += sigma
        D[2, 2] += u
        f[3:] = (D @ y[3:].reshape(3, 3)).reshape(9)
        return f

    return rhs


def flow(p, x0, times, rtol, atol, max_steps, var=False):
    y0 = np.zeros(12 if var else 3)
    y0[:3] = np.asarray(x0, dtype=float).reshape(3)
    if var:
        y0[3:] = np.eye(3).reshape(9)
    return integrate.solve(make_rhs(tuple(p), var), y0, times, integrate.block_norm(rtol, atol), max_steps)


def level_hit(p, x0, level, t_max, rtol, atol, max_steps):
    y0 = np.asarray(x0, dtype=float).reshape(3).copy()
    return integrate.level_hit(
        make_rhs(tuple(p), False), y0, level, t_max, integrate.block_norm(rtol, atol), max_steps
    )
