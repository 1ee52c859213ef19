"""Continuous angle of the stable-plane projection along flowlines.

Over one time unit the flow turns the stable projection by ``-mu t`` plus a
small correction ``angle_correction``.  Chaining those corrections over unit
windows gives a continuous lift of the angle (``angle_lift``); at the exit
time it yields the exit angle used by the return map.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleInconsistent, DomainExit, LiftMismatch, PreconditionViolated
from .flow import BoundReport, FlowModel, LevelHit
from .geometry import in_unit_box, linear_flow, stable_norm


def correction_bound(eta: float, sigma: float) -> float:
    """Largest angle correction allowed over one time unit."""
    return math.asin(eta / (math.exp(sigma) - eta))


@dataclass
class AngleCorrection:
    delta: float
    bound: float
    clamped_by: float = 0.0  # how far the arcsin argument had to be clamped into [-1, 1]


def _rotation_correction(v2, w2) -> tuple[float, float]:
    """arcsin of the sine between unit vectors w and v, with cos check; returns (angle, clamp)."""
    cos = v2[0] * w2[0] + v2[1] * w2[1]
    if cos <= 0.0:
        raise AngleInconsistent(f"stable projection turned by more than a right angle (cos={cos:.3g})")
    s = w2[0] * v2[1] - w2[1] * v2[0]  # <v, w_perp> with w_perp = (-w2, w1)
    c = min(1.0, max(-1.0, s))
    return math.asin(c), abs(s - c)


def _unit2(z) -> np.ndarray:
    r = math.hypot(z[0], z[1])
    if r == 0.0:
        raise AngleInconsistent("stable projection vanished")
    return np.array([z[0] / r, z[1] / r])


def angle_correction(model: FlowModel, eta: float, x, psi: float, t: float) -> AngleCorrection:
    """Angle between ``P_L F(t,x)`` and ``T(t) P_L x`` (positive counter-clockwise)."""
    p = model.params
    x = np.asarray(x, dtype=float)
    if not 0.0 <= eta < math.exp(p.sigma) / 2.0:
        raise PreconditionViolated("eta must lie in [0, e^sigma / 2)")
    if not 0.0 <= t <= 1.0:
        raise PreconditionViolated("t must lie in [0, 1]")
    if not in_unit_box(x, 1e-12) or stable_norm(x) == 0.0:
        raise PreconditionViolated("x must lie in the unit box off the unstable axis")
    u = _unit2(x)
    if math.hypot(u[0] - math.cos(psi), u[1] - math.sin(psi)) > 1e-9:
        raise PreconditionViolated("psi is not the angle of the stable projection of x")
    bound = correction_bound(eta, p.sigma)
    if t == 0.0:
        return AngleCorrection(0.0, bound)
    xl = np.array([x[0], x[1], 0.0])
    w = _unit2(linear_flow(p, t, xl))
    v = _unit2(model.eval(t, x))
    d, clamp = _rotation_correction(v, w)
    return AngleCorrection(d, bound, clamp)


@dataclass
class AngleLift:
    psi0: float
    times: np.ndarray
    phi: np.ndarray
    stable_radius: np.ndarray
    unstable_abs: np.ndarray
    integer_phi: np.ndarray
    max_mismatch: float = 0.0
    corrections: list = field(default_factory=list)

    def at(self, t: float) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12:
            raise ValueError(f"t={t} is not a sample time")
        return float(self.phi[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "phi", "stable_radius", "unstable_abs"])
            for row in zip(self.times, self.phi, self.stable_radius, self.unstable_abs):
                w.writerow([format(float(v), ".17g") for v in row])


def _dense_unwrap(model: FlowModel, x, times, max_depth: int = 12) -> np.ndarray:
    """Unwrap ``arg P_L F(t,x)`` on ``times``, halving steps where raw jumps exceed pi/2."""
    states = model.states(x, times)
    raw = np.arctan2(states[:, 1], states[:, 0])
    out = np.empty(len(times))
    out[0] = raw[0]

    def step(t0, a0, t1, a1, depth):
        d = (a1 - a0 + math.pi) % (2 * math.pi) - math.pi
        if abs(d) <= math.pi / 2 or depth >= max_depth:
            return d
        tm = 0.5 * (t0 + t1)
        zm = model.eval(tm, x)
        am = math.atan2(zm[1], zm[0])
        return step(t0, a0, tm, am, depth + 1) + step(tm, am, t1, a1, depth + 1)

    for i in range(1, len(times)):
        out[i] = out[i - 1] + step(times[i - 1], raw[i - 1], times[i], raw[i], 0)
    # the first raw angle may sit on another branch than psi; callers shift
    return out


def angle_lift(
    model: FlowModel,
    psi: float,
    delta: float,
    t_end: float,
    dense_step: float = 1.0 / 64.0,
    tol: float = 1e-7,
    cross_check: bool = True,
) -> AngleLift:
    """Continuous angle of ``P_L F(t, x)`` for ``x = (cos psi, sin psi, delta)`` on ``[0, t_end]``.

    Built window by window: on ``[k, k+1]`` the angle is
    ``phi(k) - (t-k) mu + angle_correction(t-k, F(k,x), phi(k))``.
    A dense unwrap of the raw angle cross-checks the result.
    """
    if t_end < 0:
        raise PreconditionViolated("t_end must be non-negative")
    p = model.params
    x = np.array([math.cos(psi), math.sin(psi), delta])
    n = max(math.ceil(t_end) - 1, 0)
    y = x
    ints = [x]
    for k in range(1, n + 1):
        if abs(y[2]) > 1.0 or stable_norm(y) > 1.0 + 1e-9:
            raise DomainExit(f"flowline left the unit box before t={k}")
        y = model.eval(1.0, y)
        ints.append(y)
    if abs(y[2]) > 1.0 or stable_norm(y) > 1.0 + 1e-9:
        raise DomainExit(f"flowline left the unit box before t={n + 1}")

    m = max(int(round(1.0 / dense_step)), 1)
    times_all, phi_all, rad_all, up_all, corr = [], [], [], [], []
    phi_k = psi
    iphi = [psi]
    for k in range(n + 1):
        hi = min(1.0, t_end - k)
        s = np.linspace(0.0, 1.0, m + 1)
        s = s[s < hi - 1e-15]
        s = np.append(s, hi)
        yk = ints[k]
        st = model.states(yk, s)
        wk = phi_k
        for j, (sj, z) in enumerate(zip(s, st)):
            if k > 0 and j == 0:
                continue
            if sj == 0.0:
                d = 0.0
            else:
                ang = wk - sj * p.mu
                d, _ = _rotation_correction(_unit2(z), np.array([math.cos(ang), math.sin(ang)]))
            times_all.append(k + sj)
            phi_all.append(wk - sj * p.mu + d)
            rad_all.append(stable_norm(z))
            up_all.append(abs(z[2]))
        corr.append(phi_all[-1] - (wk - s[-1] * p.mu))
        phi_k = phi_all[-1]
        iphi.append(phi_k)
    times = np.array(times_all)
    phi = np.array(phi_all)
    lift = AngleLift(psi, times, phi, np.array(rad_all), np.array(up_all), np.array(iphi), 0.0, corr)
    if cross_check:
        dense = _dense_unwrap(model, x, times)
        dense += psi - dense[0]
        mism = float(np.max(np.abs(dense - phi)))
        lift.max_mismatch = mism
        if mism > tol:
            raise LiftMismatch(f"recursion and dense unwrap differ by {mism:.3g}")
    return lift


def check_lift_envelopes(lift: AngleLift, params, eta: float, eta_tilde: float | None = None) -> BoundReport:
    """Window envelopes of the lift: the per-window arcsin envelope and, when
    ``(n+1)/n`` times the rate excess is below ``eta_tilde``, the affine rate bounds."""
    rep = BoundReport()
    b = correction_bound(eta, params.sigma)
    mu = params.mu
    tol = 1e-10 * (1.0 + float(np.max(np.abs(lift.phi))))
    for t, ph in zip(lift.times, lift.phi):
        n = max(math.ceil(t) - 1, 0)
        base = lift.psi0 - t * mu
        rep.add("window_upper", ph, base + (n + 1) * b, tol)
        rep.add("window_lower", base - (n + 1) * b, ph, tol)
        if eta_tilde is not None and n >= 1 and (n + 1) / n * rate_excess(eta, params.sigma) < eta_tilde:
            rep.add("rate_upper", ph, lift.psi0 - t * (mu - eta_tilde), tol)
            rep.add("rate_lower", lift.psi0 - t * (mu + eta_tilde), ph, tol)
    return rep


def rate_excess(eta: float, sigma: float) -> float:
    """Largest of the three per-unit-time deviation rates: two radial, one angular."""
    if not 0.0 <= eta < math.exp(sigma) / 2.0:
        raise PreconditionViolated("eta must lie in [0, e^sigma / 2)")
    q = eta * math.exp(-sigma)
    return max(math.log1p(q), -math.log1p(-q), correction_bound(eta, sigma))


def exit_angle_from_hit(params, psi_abs: float, hit: LevelHit, check: bool = True) -> float:
    """Lifted angle at the exit time from the unit-time states of a level hit.

    Each unit window contributes ``-mu`` plus the correction read off the next
    integer state; the last partial window uses the endpoint.  Since the lift
    agrees with the raw angle modulo 2 pi at every integer time, each
    correction is the wrapped raw-angle increment plus ``mu``; it must stay
    below a right angle, which is the cosine test of ``angle_correction``.
    """
    mu = params.mu
    ints = hit.integer_states
    n = hit.n
    pts = np.vstack([ints[:, :2], hit.endpoint[None, :2]])
    if np.any(np.hypot(pts[:, 0], pts[:, 1]) == 0.0):
        raise AngleInconsistent("stable projection vanished")
    raw = np.arctan2(pts[:, 1], pts[:, 0])
    steps = np.full(n + 1, mu)
    steps[-1] = (hit.tau - n) * mu
    raw0 = math.atan2(math.sin(psi_abs), math.cos(psi_abs))
    raw = raw.copy()
    raw[0] = raw0
    d = np.diff(raw) + steps
    d = (d + math.pi) % (2 * math.pi) - math.pi
    if np.any(np.abs(d) >= math.pi / 2):
        k = int(np.argmax(np.abs(d) >= math.pi / 2))
        raise AngleInconsistent(f"stable projection turned by more than a right angle in window {k}")
    phi = psi_abs - float(np.sum(steps)) + float(np.sum(d))
    if check:
        v = pts[-1] / math.hypot(pts[-1, 0], pts[-1, 1])
        res = math.hypot(math.cos(phi) - v[0], math.sin(phi) - v[1])
        if res > 1e-8:
            raise AngleInconsistent(f"exit angle does not match the exit direction (residual {res:.3g})")
    return phi


def exit_angle(model: FlowModel, omega: float, psi: float, delta: float) -> float:
    """Lifted exit angle for the cylinder point at angle ``omega + psi`` and height ``delta``."""
    if not -math.pi < psi < math.pi:
        raise PreconditionViolated("psi must lie in (-pi, pi)")
    if not 0.0 < delta < 1.0:
        raise PreconditionViolated("delta must lie in (0, 1)")
    a = omega + psi
    hit = model.level_hit(np.array([math.cos(a), math.sin(a), delta]))
    return exit_angle_from_hit(model.params, a, hit)
