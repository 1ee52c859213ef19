"""Bookkeeping along a homoclinic flowline.

The flowline ``h`` leaves the equilibrium along the positive unstable axis
and returns inside the stable plane.  For a zoom factor ``eps`` the zoomed
flowline ``h / eps`` meets the exit level ``e3`` at an entry time and the
unit cylinder at an exit time; those times, the zoom factors and the exit
angles are collected in ``SectionTimes``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import (
    DegenerateTangent,
    EpsTooLarge,
    NewtonDiverged,
    NoRadiusFound,
    NotEnoughCrossings,
    PreconditionViolated,
    TransversalityLost,
)
from .flow import FlowModel, ScaledFlow
from .geometry import E3, stable_norm, wrap_angle


@dataclass
class HomoclinicData:
    """Flowline ``h`` with ``h(t)`` on the unstable axis for ``t <= t_U`` and in the stable plane for ``t >= t_L``."""

    h: Callable[[float], np.ndarray]
    t_U: float
    t_L: float
    derivative: Callable[[float], np.ndarray] | None = None

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.h(t), dtype=float)

    def zoomed(self, eps: float) -> Callable[[float], np.ndarray]:
        return lambda t: self(t) / eps

    def velocity(self, t: float, dt: float = 1e-6) -> np.ndarray:
        if self.derivative is not None:
            return np.asarray(self.derivative(t), dtype=float)
        return (self(t + dt) - self(t - dt)) / (2 * dt)

    def check_structure(self, t_lo: float, t_hi: float, n: int = 200, tol: float = 1e-8) -> dict:
        """Residuals of the axis/plane membership and of non-vanishing on a sample grid."""
        ts_u = np.linspace(t_lo, self.t_U, n)
        ts_l = np.linspace(self.t_L, t_hi, n)
        res_u = max(stable_norm(self(t)) / max(np.linalg.norm(self(t)), 1e-300) for t in ts_u)
        res_l = max(abs(self(t)[2]) / max(np.linalg.norm(self(t)), 1e-300) for t in ts_l)
        nonzero = min(np.linalg.norm(self(t)) for t in np.linspace(t_lo, t_hi, 2 * n))
        positive = all(self(t)[2] > 0 for t in ts_u)
        return {
            "unstable_residual": res_u,
            "stable_residual": res_l,
            "min_norm": nonzero,
            "positive_branch": positive,
            "ok": res_u < tol and res_l < tol and nonzero > 0 and positive,
        }

    @classmethod
    def from_seed(
        cls,
        flow: FlowModel,
        seed,
        t_back: float,
        t_forward: float,
        grid_step: float = 1.0,
        tol: float = 1e-8,
    ) -> "HomoclinicData":
        """Flowline through ``seed`` (at t=0), cached on a time grid.

        ``t_U`` is the latest grid time up to which the flowline stays on the
        unstable axis (relative residual below ``tol``), ``t_L`` the earliest
        from which it stays in the stable plane.
        """
        seed = np.asarray(seed, dtype=float)
        back = np.arange(0.0, -t_back - 1e-12, -grid_step)
        fwd = np.arange(0.0, t_forward + 1e-12, grid_step)
        cache = {}
        y = seed
        for a, b in zip(back[:-1], back[1:]):
            cache[float(a)] = y
            y = flow.eval(b - a, y)
        cache[float(back[-1])] = y
        y = seed
        for a, b in zip(fwd[:-1], fwd[1:]):
            cache[float(a)] = y
            y = flow.eval(b - a, y)
        cache[float(fwd[-1])] = y
        grid = np.array(sorted(cache))

        def h(t):
            k = grid[np.argmin(np.abs(grid - t))]
            return flow.eval(t - k, cache[float(k)])

        def rel_u(t):
            z = cache[float(t)]
            return stable_norm(z) / max(np.linalg.norm(z), 1e-300)

        def rel_l(t):
            z = cache[float(t)]
            return abs(z[2]) / max(np.linalg.norm(z), 1e-300)

        t_U = None
        for t in grid:
            if rel_u(t) < tol:
                t_U = t
            else:
                break
        t_L = None
        for t in grid[::-1]:
            if rel_l(t) < tol:
                t_L = t
            else:
                break
        if t_U is None or t_L is None:
            raise PreconditionViolated("seed flowline does not reach the axis and the plane on the sampled range")

        def dh(t):
            return flow.time_derivative(h(t))

        return cls(h=h, t_U=float(t_U), t_L=float(t_L), derivative=dh)


@dataclass
class SectionTimes:
    j: int
    t_E_eps: float
    t_I_j: float
    eps_j: float
    r_j: float
    omega_j: float

    def as_dict(self) -> dict:
        return {
            "j": self.j,
            "t_E_eps": self.t_E_eps,
            "t_I_j": self.t_I_j,
            "eps_j": self.eps_j,
            "r_j": self.r_j,
            "omega_j": self.omega_j,
        }


def entry_time(h: HomoclinicData, eps: float, tol: float = 1e-13) -> float:
    """Time ``t <= t_U`` with ``h(t) = eps * e3``, by bisection on ``|h|``."""
    top = float(np.linalg.norm(h(h.t_U)))
    if not 0 < eps < top:
        raise EpsTooLarge(f"eps={eps} must lie in (0, |h(t_U)|={top})")
    if h(h.t_U)[2] <= 0:
        raise PreconditionViolated("only the positive unstable branch is supported")
    hi = h.t_U
    step = 1.0
    lo = hi - step
    while np.linalg.norm(h(lo)) >= eps:
        step *= 2.0
        lo = hi - step
        if step > 1e6:
            raise PreconditionViolated("flowline does not decay in backward time")
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(h(mid)) >= eps:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def exit_crossings(
    h: HomoclinicData,
    count: int,
    t_end: float | None = None,
    spacing: float = 1.0,
) -> list[SectionTimes]:
    """Candidate exit times ``t_L + k*spacing`` where ``|h|`` strictly decreases.

    A candidate is kept when ``(|h|^2)' < 0`` there and its norm is below the
    previously kept one; the norm becomes the zoom factor ``eps_j``.
    """
    if count < 0:
        raise PreconditionViolated("count must be non-negative")
    if count == 0:
        return []
    t_end = h.t_L + spacing * (40 * count + 40) if t_end is None else t_end
    top = float(np.linalg.norm(h(h.t_U)))
    out: list[SectionTimes] = []
    last = math.inf
    t = h.t_L
    while t <= t_end and len(out) < count:
        z = h(t)
        r = float(np.linalg.norm(z))
        slope = 2.0 * float(np.dot(h.velocity(t), z))
        if slope < 0 and 0 < r < last and r < top:
            out.append(
                SectionTimes(
                    j=len(out),
                    t_E_eps=entry_time(h, r),
                    t_I_j=float(t),
                    eps_j=r,
                    r_j=math.nan,
                    omega_j=wrap_angle(math.atan2(z[1], z[0])),
                )
            )
            last = r
        t += spacing
    if len(out) < count:
        raise NotEnoughCrossings(f"found {len(out)} of {count} exit crossings up to t={t_end}")
    return out


@dataclass
class TransversalityReport:
    derivative: np.ndarray
    derivative_fd: np.ndarray
    radial: float
    inward: bool
    transversal: bool
    kind: str


def check_transversality(model: FlowModel, x, tol: float = 1e-9, fd_step: float = 1e-6) -> TransversalityReport:
    """Crossing direction of the flow at a section point.

    On the cylinder/stable-plane circle the radial component ``<dF/dt, x>``
    must be negative (inward).  At the exit point ``e3`` the velocity must
    leave the stable plane (non-zero third component).
    """
    x = np.asarray(x, dtype=float)
    on_exit = abs(x[2] - 1.0) < tol and stable_norm(x) < tol
    on_circle = abs(stable_norm(x) - 1.0) < tol and abs(x[2]) < tol
    if not (on_exit or on_circle):
        raise PreconditionViolated("x must be e3 or lie on the unit circle of the stable plane")
    fd = (model.eval(fd_step, x) - model.eval(-fd_step, x)) / (2 * fd_step)
    f = model.field(x)
    d = fd if f is None else np.asarray(f, dtype=float)
    if np.linalg.norm(d) < 1e-12:
        raise DegenerateTangent("flow velocity vanishes at x")
    if on_exit:
        return TransversalityReport(d, fd, float(d[2]), bool(d[2] > 0), bool(abs(d[2]) > 1e-12), "exit")
    radial = float(d[0] * x[0] + d[1] * x[1])
    return TransversalityReport(d, fd, radial, radial < 0, abs(radial) > 1e-12, "entry")


def _cylinder_gap(z) -> float:
    return z[0] * z[0] + z[1] * z[1] - 1.0


def exterior_travel_time(model: FlowModel, st: SectionTimes, y, tol: float = 1e-12, max_iter: int = 60) -> float:
    """Root of ``|P_L F(t, y)|^2 = 1`` near the seed ``t_I - t_E``.

    Newton's method first; if it fails, bisection on a sign change inside
    ``seed +- 1`` closest to the seed.
    """
    y = np.asarray(y, dtype=float)
    seed = st.t_I_j - st.t_E_eps
    t = seed
    ok = False
    for _ in range(max_iter):
        z = model.eval(t, y)
        g = _cylinder_gap(z)
        v = model.time_derivative(z)
        dg = 2.0 * (z[0] * v[0] + z[1] * v[1])
        if abs(g) < tol:
            ok = True
            break
        if abs(dg) < 1e-14:
            break
        t_new = t - g / dg
        if abs(t_new - seed) > 1.0:
            break
        if abs(t_new - t) < tol * max(1.0, abs(t)):
            t = t_new
            ok = True
            break
        t = t_new
    if not ok:
        ts = np.linspace(seed - 1.0, seed + 1.0, 129)
        gs = np.array([_cylinder_gap(model.eval(s, y)) for s in ts])
        roots = [i for i in range(len(ts) - 1) if gs[i] == 0 or gs[i] * gs[i + 1] < 0]
        if not roots:
            raise NewtonDiverged("no cylinder crossing within one time unit of the seed")
        i = min(roots, key=lambda k: abs(0.5 * (ts[k] + ts[k + 1]) - seed))
        lo, hi, glo = ts[i], ts[i + 1], gs[i]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = _cylinder_gap(model.eval(mid, y))
            if gm == 0:
                lo = hi = mid
                break
            if (gm < 0) == (glo < 0):
                lo, glo = mid, gm
            else:
                hi = mid
            if hi - lo < tol:
                break
        t = 0.5 * (lo + hi)
    z = model.eval(t, y)
    v = model.time_derivative(z)
    if abs(2.0 * (z[0] * v[0] + z[1] * v[1])) < 1e-12:
        raise TransversalityLost("flow is tangent to the cylinder at the crossing")
    return float(t)


def _exit_ring(r: float, n_angles: int = 8) -> list[np.ndarray]:
    pts = [E3.copy()]
    for rho in (r / 3.0, 2.0 * r / 3.0, 0.999 * r):
        for th in np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False):
            pts.append(np.array([rho * math.cos(th), rho * math.sin(th), 1.0]))
    return pts


def section_radius(
    model: FlowModel,
    st: SectionTimes,
    r0: float = 0.5,
    max_halvings: int = 30,
    n_angles: int = 8,
    min_angle_gap: float = 1e-6,
) -> float:
    """Radius of an exit disk around ``e3`` on which the exterior passage is well behaved.

    Starting from ``r0`` the radius is halved until every sampled point
    yields a transversal cylinder crossing near the seed time, leaves the
    exit plane transversally, and does not land on the excluded ray
    opposite the base exit angle.
    """
    r = r0
    for _ in range(max_halvings + 1):
        if _radius_ok(model, st, r, n_angles, min_angle_gap):
            return r
        r *= 0.5
    raise NoRadiusFound(f"no admissible radius down to {r}")


def _radius_ok(model, st, r, n_angles, min_angle_gap) -> bool:
    pts = _exit_ring(r, n_angles)
    if not pts:
        return False
    for y in pts:
        try:
            t = exterior_travel_time(model, st, y)
        except (NewtonDiverged, TransversalityLost):
            return False
        v = model.time_derivative(y)
        if abs(v[2]) < 1e-12:
            return False
        z = model.eval(t, y)
        ang = math.atan2(z[1], z[0])
        if abs(wrap_angle(ang - st.omega_j - math.pi)) < min_angle_gap:
            return False
    return True


def section_radii(base: FlowModel, sts: list[SectionTimes], r0: float = 0.5, **kw) -> list[SectionTimes]:
    """Fill ``r_j`` for each crossing with the zoomed flow, forcing a non-increasing sequence."""
    out = []
    prev = r0
    for st in sts:
        r = section_radius(ScaledFlow(base, st.eps_j), st, r0=prev, **kw)
        prev = min(prev, r)
        out.append(replace(st, r_j=prev))
    return out


def crossings_to_csv(sts: list[SectionTimes], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "t_I_j", "eps_j", "r_j", "omega_j"])
        for st in sts:
            w.writerow([st.j] + [format(v, ".17g") for v in (st.t_I_j, st.eps_j, st.r_j, st.omega_j)])
