"""Closed-form test flows and flowlines used to exercise the section machinery.

``RigidRotationFlow`` rotates space about an axis parallel to ``e2`` through
``(2, 0, 2)``.  It carries ``e3`` the long way round onto ``e1`` and crosses
the unit cylinder there inward, so it provides an exterior passage
``M_E -> M_I`` with known travel time, independent of any integrator.
"""
from __future__ import annotations

import math

import numpy as np

from .flow import FlowModel


class RigidRotationFlow(FlowModel):
    def __init__(self, angular_speed: float = -1.0, center=(2.0, 0.0, 2.0), params=None):
        self.omega = float(angular_speed)
        self.center = np.asarray(center, dtype=float)
        self.params = params
        self.t_max = 1e6

    def _rot(self, t):
        a = self.omega * t
        c, s = math.cos(a), math.sin(a)
        # rotation in the (x1, x3) plane; negative speed turns clockwise with x1 right, x3 up
        return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.center + self._rot(t) @ (x - self.center)

    def jacobian_x(self, t, x):
        return self._rot(t)

    def field(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.omega * np.array([-d[2], 0.0, d[0]])

    def arc_time(self, x_from, x_to) -> float:
        """Time to rotate ``x_from`` onto ``x_to`` (both on the same orbit circle)."""
        a = np.asarray(x_from, dtype=float) - self.center
        b = np.asarray(x_to, dtype=float) - self.center
        th_a = math.atan2(a[2], a[0])
        th_b = math.atan2(b[2], b[0])
        if self.omega > 0:
            return ((th_b - th_a) % (2 * math.pi)) / self.omega
        return ((th_a - th_b) % (2 * math.pi)) / -self.omega


def spiral_flowline(sigma: float, mu: float, u: float, t_U: float, t_L: float, scale_U: float = 1.0,
                    scale_L: float = 1.0):
    """Homoclinic-shaped curve: unstable ray for t <= t_U, planar spiral for t >= t_L.

    Between the two pieces the curve interpolates linearly; it is a test
    flowline for the bookkeeping, not a solution of an ODE.
    """

    def up(t):
        return np.array([0.0, 0.0, scale_U * math.exp(u * t)])

    def down(t):
        r = scale_L * math.exp(sigma * t)
        return np.array([r * math.cos(mu * t), r * math.sin(mu * t), 0.0])

    def h(t):
        if t <= t_U:
            return up(t)
        if t >= t_L:
            return down(t)
        w = (t - t_U) / (t_L - t_U)
        return (1 - w) * up(t_U) + w * down(t_L)

    def dh(t):
        if t <= t_U:
            return u * up(t)
        if t >= t_L:
            r = scale_L * math.exp(sigma * t)
            c, s = math.cos(mu * t), math.sin(mu * t)
            return np.array([r * (sigma * c - mu * s), r * (sigma * s + mu * c), 0.0])
        return (down(t_L) - up(t_U)) / (t_L - t_U)

    return h, dh
