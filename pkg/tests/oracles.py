"""Reference values computed independently of the package.

Closed forms are evaluated in mpmath at 40 digits; the model field is
reduced to one quadrature (its radial parts are exact exponentials) and
integrated with scipy's adaptive Gauss-Kronrod rule, not an ODE solver.
"""
from __future__ import annotations

import math

import mpmath as mp
import numpy as np
from scipy.integrate import quad
from scipy.optimize import least_squares

mp.mp.dps = 40


def generator(sigma, mu, u):
    return mp.matrix([[sigma, mu, 0], [-mu, sigma, 0], [0, 0, u]])


def linear_state(sigma, mu, u, t, x) -> np.ndarray:
    """``expm(t A) x`` by mpmath's Pade/scaling-squaring at high precision."""
    E = mp.expm(generator(mp.mpf(sigma), mp.mpf(mu), mp.mpf(u)) * mp.mpf(t))
    v = E * mp.matrix([mp.mpf(float(c)) for c in x])
    return np.array([float(v[i]) for i in range(3)])


def linear_matrix(sigma, mu, u, t) -> np.ndarray:
    E = mp.expm(generator(mp.mpf(sigma), mp.mpf(mu), mp.mpf(u)) * mp.mpf(t))
    return np.array([[float(E[i, j]) for j in range(3)] for i in range(3)])


def escape_time(x3: float, u: float) -> float:
    return float(mp.log(1 / mp.mpf(x3)) / mp.mpf(u))


def linear_exit_angle(omega, psi, delta, mu, u) -> float:
    return float(mp.mpf(omega) + mp.mpf(psi) - mp.mpf(mu) * mp.log(1 / mp.mpf(delta)) / mp.mpf(u))


def rate_excess(eta, sigma) -> float:
    q = mp.mpf(eta) * mp.exp(-mp.mpf(sigma))
    return float(max(mp.log(1 + q), -mp.log(1 - q), mp.asin(mp.mpf(eta) / (mp.exp(mp.mpf(sigma)) - mp.mpf(eta)))))


def level_constants(sigma, mu, u, e):
    """``(c, k)`` of the two height levels at rate margin ``e``."""
    sigma, mu, u, e = (mp.mpf(v) for v in (sigma, mu, u, e))
    c = (u + e) * (mu + e) / ((u - e) * (mu - e))
    k = mp.exp(-6 * mp.pi * (u + e) / (mu - e))
    return c, k


def linear_gap(sigma, mu, u, e, level_high) -> float:
    """Exit-angle gap over offsets in ``(-pi, pi)`` for the linear flow.

    The smallest angle at the upper level sits at offset ``-pi``, the largest
    at the lower level at ``+pi``; the base angle cancels.
    """
    c, k = level_constants(sigma, mu, u, e)
    d2 = mp.mpf(level_high)
    d1 = k * d2**c
    return float(mp.mpf(mu) / mp.mpf(u) * mp.log(d2 / d1) - 2 * mp.pi)


def lower_level(sigma, mu, u, e, level_high) -> float:
    c, k = level_constants(sigma, mu, u, e)
    return float(k * mp.mpf(level_high) ** c)


def cubic_cutoff(r: float, radius: float) -> float:
    if r <= radius:
        return 1.0
    if r >= 2 * radius:
        return 0.0
    s = (r - radius) / radius
    return 1.0 - 3.0 * s * s + 2.0 * s**3


def model_field_state(sigma, mu, u, coupling, radius, x0, t) -> np.ndarray:
    """State of ``A x + coupling x3^2 chi(|x|) (-x2, x1, 0)`` at time ``t``.

    The unstable coordinate and the stable radius evolve by exact
    exponentials; only the angle needs a quadrature.
    """
    x0 = np.asarray(x0, dtype=float)
    rho0 = math.hypot(x0[0], x0[1])
    th0 = math.atan2(x0[1], x0[0])
    z0 = x0[2]

    def spin(s):
        z = z0 * math.exp(u * s)
        r = math.hypot(rho0 * math.exp(sigma * s), z)
        return coupling * z * z * cubic_cutoff(r, radius)

    extra = 0.0
    if coupling and t:
        extra, _ = quad(spin, 0.0, t, epsabs=1e-15, epsrel=1e-13, limit=200)
    th = th0 - mu * t + extra
    rho = rho0 * math.exp(sigma * t)
    return np.array([rho * math.cos(th), rho * math.sin(th), z0 * math.exp(u * t)])


def model_field_angle_increment(sigma, mu, u, coupling, radius, x0, t) -> float:
    """Lifted change of the stable angle over ``[0, t]``."""
    x0 = np.asarray(x0, dtype=float)
    rho0 = math.hypot(x0[0], x0[1])
    z0 = x0[2]

    def spin(s):
        z = z0 * math.exp(u * s)
        r = math.hypot(rho0 * math.exp(sigma * s), z)
        return coupling * z * z * cubic_cutoff(r, radius)

    extra, _ = quad(spin, 0.0, t, epsabs=1e-15, epsrel=1e-13, limit=200) if t else (0.0, 0.0)
    return -mu * t + extra


def stable_graph_by_collocation(sigma, mu, u, stable_curvature, r: float = 0.1, n: int = 40) -> np.ndarray:
    """Coefficients ``(a11, a12, a22)`` of ``x3 = a11 x1^2 + a12 x1 x2 + a22 x2^2`` making the graph invariant.

    Least squares on the tangency residual ``x3' - grad(graph) . (x1', x2')``
    at collocation points, for the field ``A x + (0, 0, k_s (x1^2 + x2^2))``.
    """
    A = np.array([[sigma, mu], [-mu, sigma]])
    rng = np.random.default_rng(11)
    pts = rng.uniform(-r, r, size=(n, 2))

    def residual(a):
        out = []
        for x1, x2 in pts:
            h = a[0] * x1 * x1 + a[1] * x1 * x2 + a[2] * x2 * x2
            grad = np.array([2 * a[0] * x1 + a[1] * x2, a[1] * x1 + 2 * a[2] * x2])
            planar = A @ np.array([x1, x2])
            out.append(u * h + stable_curvature * (x1 * x1 + x2 * x2) - grad @ planar)
        return np.array(out) / (r * r)

    return least_squares(residual, np.zeros(3), xtol=1e-15, ftol=1e-15, gtol=1e-15).x
