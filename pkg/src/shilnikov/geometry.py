"""Coordinates, projections and the linearized flow at a saddle-focus.

Coordinates are adapted to the equilibrium: the stable plane is spanned by
``e1, e2`` and the unstable line by ``e3``.  The linear flow rotates and
contracts in the stable plane and expands along the unstable line.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionViolated

Vec3 = np.ndarray

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def as_vec3(x) -> Vec3:
    v = np.asarray(x, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise PreconditionViolated(f"non-finite state {v}")
    return v


@dataclass(frozen=True)
class StabilityParams:
    """Eigenvalue data at the equilibrium: ``sigma +- i mu`` and ``u``."""

    sigma: float
    mu: float
    u: float

    def __post_init__(self):
        if not (self.sigma < 0 < self.mu):
            raise PreconditionViolated(f"need sigma < 0 < mu, got sigma={self.sigma}, mu={self.mu}")
        if not self.u > 0:
            raise PreconditionViolated(f"need u > 0, got {self.u}")
        if not self.sigma + self.u > 0:
            raise PreconditionViolated(
                f"saddle quantity sigma+u must be positive, got {self.sigma + self.u}"
            )

    @property
    def matrix(self) -> np.ndarray:
        """Generator of the linear flow, ``T(t) = expm(t * matrix)``."""
        s, m, u = self.sigma, self.mu, self.u
        return np.array([[s, m, 0.0], [-m, s, 0.0], [0.0, 0.0, u]])

    def as_dict(self) -> dict:
        return {"sigma": self.sigma, "mu": self.mu, "u": self.u}


def project_stable(x) -> Vec3:
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[..., 2] = 0.0
    return out


def project_unstable(x) -> Vec3:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[..., 2] = x[..., 2]
    return out


def stable_norm(x) -> float:
    x = np.asarray(x, dtype=float)
    return np.hypot(x[..., 0], x[..., 1])


def linear_flow_matrix(params: StabilityParams, t: float) -> np.ndarray:
    s, m, u = params.sigma, params.mu, params.u
    c, sn = np.cos(m * t), np.sin(m * t)
    a = np.exp(s * t)
    return np.array([[a * c, a * sn, 0.0], [-a * sn, a * c, 0.0], [0.0, 0.0, np.exp(u * t)]])


def linear_flow(params: StabilityParams, t: float, x) -> Vec3:
    """Apply the linear flow ``T(t)`` to ``x``."""
    x = np.asarray(x, dtype=float)
    s, m, u = params.sigma, params.mu, params.u
    c, sn = np.cos(m * t), np.sin(m * t)
    a = np.exp(s * t)
    return np.array(
        [a * (c * x[0] + sn * x[1]), a * (-sn * x[0] + c * x[1]), np.exp(u * t) * x[2]]
    )


def linear_flow_many(params: StabilityParams, times, x) -> np.ndarray:
    """``T(t) x`` for an array of times, one row per time."""
    t = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    c, sn = np.cos(params.mu * t), np.sin(params.mu * t)
    a = np.exp(params.sigma * t)
    return np.stack([a * (c * x[0] + sn * x[1]), a * (-sn * x[0] + c * x[1]), np.exp(params.u * t) * x[2]], axis=1)


def linear_flow_norm(params: StabilityParams, t: float) -> float:
    """Operator 2-norm of ``T(t)``; the rotation block is isometric."""
    return max(np.exp(params.sigma * t), np.exp(params.u * t))


@dataclass(frozen=True)
class BoxConstants:
    """Radii of the unit box and of the outer ball that contains its unit-time image."""

    outer_radius: float
    max_linear_norm: float

    def in_unit_box(self, x) -> bool:
        return in_unit_box(x)

    def in_outer_ball(self, x) -> bool:
        return float(np.linalg.norm(x)) <= self.outer_radius


def box_constants(params: StabilityParams, n_grid: int = 1001) -> BoxConstants:
    """Outer ball radius ``2 (max_{[0,1]} |T(t)| + e^u + 2)``.

    The maximum is taken analytically and cross-checked against a sampled
    spectral norm on a uniform grid.
    """
    ts = np.linspace(0.0, 1.0, n_grid)
    analytic = max(linear_flow_norm(params, t) for t in ts)
    sampled = max(np.linalg.norm(linear_flow_matrix(params, t), 2) for t in ts)
    if abs(sampled - analytic) > 1e-10 * max(1.0, analytic):
        raise AssertionError(f"operator norm mismatch: sampled {sampled} vs analytic {analytic}")
    # the maximum over [0, 1] of max(e^{sigma t}, e^{u t}) sits at t = 1
    max_norm = max(analytic, np.exp(params.u))
    return BoxConstants(outer_radius=2.0 * (max_norm + np.exp(params.u) + 2.0), max_linear_norm=max_norm)


def in_unit_box(x, tol: float = 0.0) -> bool:
    """Membership in ``{|P_stable x| <= 1, |x3| <= 1}``."""
    x = np.asarray(x, dtype=float)
    return bool(stable_norm(x) <= 1.0 + tol and abs(x[2]) <= 1.0 + tol)


def wrap_angle(a: float) -> float:
    """Map an angle to ``[-pi, pi)``."""
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)
