"""Pure-Python Dormand-Prince 5(4) integrator.

Generic over the right-hand side.  It mirrors the compiled kernel step for
step (same tableau, controller, output clipping and crossing polish) so
the two backends agree to rounding.  It also integrates arbitrary vector
fields for the flattening pipeline, where the usual mixed absolute /
relative error norm is the right choice.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

# Dormand-Prince tableau
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

HMAX = 0.25
H0 = 0.01

STATUS_OK = 0
STATUS_STEPS = 1
STATUS_TIME = 2
STATUS_SIGN = 3

Norm = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


def block_norm(rtol: float, atol: float) -> Norm:
    """Relative error per block: stable pair, unstable coordinate, Jacobian row blocks."""

    def norm(y0, y1, e):
        out = math.hypot(e[0], e[1]) / (
            rtol * max(math.hypot(y0[0], y0[1]), math.hypot(y1[0], y1[1])) + atol
        )
        out = max(out, abs(e[2]) / (rtol * max(abs(y0[2]), abs(y1[2])) + atol))
        if y0.shape[0] == 12:
            m0 = max(np.max(np.abs(y0[3:9])), np.max(np.abs(y1[3:9])))
            out = max(out, np.max(np.abs(e[3:9])) / (rtol * m0 + atol))
            m0 = max(np.max(np.abs(y0[9:12])), np.max(np.abs(y1[9:12])))
            out = max(out, np.max(np.abs(e[9:12])) / (rtol * m0 + atol))
        return float(out)

    return norm


def mixed_norm(rtol: float, atol: float) -> Norm:
    """Classic max-norm of ``e / (atol + rtol |y|)``."""

    def norm(y0, y1, e):
        sc = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
        return float(np.max(np.abs(e) / sc))

    return norm


def dp_step(rhs, y, k1, h, norm: Norm):
    """One Dormand-Prince step: returns ``(y_new, f(y_new), scaled_error)``."""
    ks = [k1]
    for a in _A[1:]:
        acc = y + h * sum(ai * ki for ai, ki in zip(a, ks))
        ks.append(rhs(acc))
    yn = y + h * (_B[0] * ks[0] + _B[2] * ks[2] + _B[3] * ks[3] + _B[4] * ks[4] + _B[5] * ks[5])
    k7 = rhs(yn)
    err = h * (
        _E[0] * ks[0] + _E[2] * ks[2] + _E[3] * ks[3] + _E[4] * ks[4] + _E[5] * ks[5] + _E[6] * k7
    )
    return yn, k7, norm(y, yn, err)


def _factor(err: float) -> float:
    if err == 0.0:
        return 5.0
    return min(5.0, max(0.2, 0.9 * err ** -0.2))


def solve(rhs, y0, times, norm: Norm, max_steps: int, hmax: float = HMAX):
    """Integrate an autonomous system from t=0 through the monotone ``times``.

    Returns ``(status, states, nsteps)``.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    y = np.array(y0, dtype=float)
    out = np.empty((times.shape[0], y.shape[0]))
    direction = -1.0 if times.shape[0] and times[-1] < 0 else 1.0
    k1 = rhs(y)
    t = 0.0
    h = direction * H0
    steps = 0
    for idx, T in enumerate(times):
        while (T - t) * direction > 0.0:
            hh = h
            clipped = False
            if (t + hh - T) * direction >= 0.0:
                hh = T - t
                clipped = True
            yn, k7, err = dp_step(rhs, y, k1, hh, norm)
            steps += 1
            if steps > max_steps:
                return STATUS_STEPS, out, steps
            if not math.isfinite(err):
                err = 1e10
            if err <= 1.0:
                t = T if clipped else t + hh
                y, k1 = yn, k7
                hprev = h
                h = hh * _factor(err)
                if clipped and abs(hprev) > abs(h):
                    h = hprev
                if abs(h) > hmax:
                    h = direction * hmax
            else:
                h = hh * min(1.0, _factor(err))
        out[idx] = y
    return STATUS_OK, out, steps


def _hermite(a0, d0, a1, d1, h, th):
    h00 = 2 * th ** 3 - 3 * th ** 2 + 1
    h10 = th ** 3 - 2 * th ** 2 + th
    h01 = -2 * th ** 3 + 3 * th ** 2
    h11 = th ** 3 - th ** 2
    return h00 * a0 + h10 * h * d0 + h01 * a1 + h11 * h * d1


def level_hit(rhs, y0, level: float, t_max: float, norm: Norm, max_steps: int, index: int = 2):
    """Integrate forward until component ``index`` first reaches ``level``.

    Returns ``(status, tau, y_tau, integer_states, nsteps)``; integer states
    are recorded at t = 0, 1, ..., n with n the largest integer below tau.
    """
    y = np.array(y0, dtype=float)
    ints = [y.copy()]
    k1 = rhs(y)
    t = 0.0
    h = H0
    steps = 0
    while True:
        next_int = math.floor(t) + 1.0
        hh = h
        clipped = False
        if t + hh >= next_int:
            hh = next_int - t
            clipped = True
        yn, k7, err = dp_step(rhs, y, k1, hh, norm)
        steps += 1
        if steps > max_steps:
            return STATUS_STEPS, t, y, np.array(ints), steps
        if not math.isfinite(err):
            err = 1e10
        if err > 1.0:
            h = hh * min(1.0, _factor(err))
            continue
        if yn[index] >= level:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _hermite(y[index], k1[index], yn[index], k7[index], hh, mid) < level:
                    lo = mid
                else:
                    hi = mid
            hs = hi * hh
            for _ in range(12):
                ys, ks, _e = dp_step(rhs, y, k1, hs, norm)
                g = ys[index] - level
                if abs(g) <= 4e-16 * level:
                    break
                dh = -g / ks[index]
                hs += dh
                if abs(dh) <= 1e-16 * (1.0 + t):
                    ys, ks, _e = dp_step(rhs, y, k1, hs, norm)
                    break
            return STATUS_OK, t + hs, ys, np.array(ints), steps
        t = next_int if clipped else t + hh
        y, k1 = yn, k7
        if clipped:
            ints.append(y.copy())
        hprev = h
        h = hh * _factor(err)
        if clipped and hprev > h:
            h = hprev
        h = min(h, HMAX)
        if y[index] <= 0.0:
            return STATUS_SIGN, t, y, np.array(ints), steps
        if t >= t_max:
            return STATUS_TIME, t, y, np.array(ints), steps
