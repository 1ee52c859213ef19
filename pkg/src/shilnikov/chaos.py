"""Parameter ledger, the two angle bands, curve refinement and symbolic shadowing.

The ledger collects every quantity the chaos construction needs and checks
each inequality separately, so a single broken inequality shows up as a
single failed flag.  ``shadow_forward`` realizes a finite symbol sequence
by nested refinement of curves joining the two height levels.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import brentq, minimize_scalar

from .angles import rate_excess
from .errors import (
    CrossingNotFound,
    DomainViolation,
    GapViolated,
    LedgerInfeasible,
    PreconditionViolated,
    RefinementFailed,
    WindowBudgetExceeded,
)
from .flow import FlowModel, LinearFlow, ScaledFlow, linearization_error, scale_for_box, scale_for_linearization_error
from .sections import CertifiedSquare, CylinderChart, PlaneChart, ReturnMap, certify_square, escape_count_floor

FLAG_ORDER = (
    "eta_tilde_bound",
    "spiral_exponent",
    "eta_smallness",
    "m_below_eta_tilde",
    "scale_small",
    "inner_radius",
    "inner_height",
    "square_certified",
    "alpha_below_delta_j",
    "delta_beta_bound",
    "delta2_below_delta_beta",
    "level_separation",
    "angle_gap",
    "psi_j_window",
    "split_direction",
)


# ---------------------------------------------------------------------------
# scalar relations


def level_exponent(p, rate_margin: float) -> float:
    e = rate_margin
    return (p.u + e) * (p.mu + e) / ((p.u - e) * (p.mu - e))


def level_factor(p, rate_margin: float) -> float:
    e = rate_margin
    return math.exp(-6.0 * math.pi * (p.u + e) / (p.mu - e))


def spiral_product(p, rate_margin: float) -> float:
    e = rate_margin
    return level_exponent(p, e) * (-p.sigma + e) / (p.u - e)


def escape_height_bound(p, section_radius: float) -> float:
    """Supremum of heights whose exit points are guaranteed inside the exit disk."""
    need = 1.0 + (2.0 / p.sigma) * math.log(section_radius)
    return math.exp(-(p.u + math.log(2.0)) * (need + 1.0))


def inner_height_bound(p, m: float, rate_margin: float) -> float:
    if not m < rate_margin:
        return 0.0
    need = m / (rate_margin - m)
    return math.exp(-(p.u + math.log(2.0)) * (need + 1.0))


def level_separation_bound(p, rate_margin: float, kappa_inv_norm: float) -> float:
    """Supremum of upper levels satisfying the separation inequality (0 when none)."""
    rho = (-p.sigma + rate_margin) / (p.u - rate_margin)
    c = level_exponent(p, rate_margin)
    k = level_factor(p, rate_margin)
    expo = 1.0 - c * rho
    if expo <= 0:
        return 0.0
    log_b = (rho * math.log(k) - math.log(2.0 * math.sqrt(2.0) * kappa_inv_norm)) / expo
    return math.exp(log_b) if log_b > -745 else 0.0


def level_separation_slack(p, rate_margin: float, kappa_inv_norm: float, level_high: float) -> float:
    """log of rhs/lhs of the separation inequality (positive when it holds)."""
    rho = (-p.sigma + rate_margin) / (p.u - rate_margin)
    c = level_exponent(p, rate_margin)
    k = level_factor(p, rate_margin)
    lhs = math.log(2.0 * math.sqrt(2.0)) + math.log(level_high)
    rhs = -math.log(kappa_inv_norm) + rho * math.log(k) + c * rho * math.log(level_high)
    return rhs - lhs


def eta_for_rate(sigma: float, target: float) -> float:
    """The eta with rate_excess(eta, sigma) == target (bisection)."""
    lo, hi = 0.0, math.exp(sigma) / 2.0 * (1 - 1e-12)
    if rate_excess(hi, sigma) <= target:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate_excess(mid, sigma) < target:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# ledger


@dataclass
class LedgerOptions:
    """Ledger inputs; ``None`` means "choose automatically"."""

    rate_margin: float
    beta: float = 0.5
    level_high: float | None = None
    level_low: float | None = None
    jacobian_bound: float | None = None
    height_escape: float | None = None
    height_max: float | None = None
    square_half_width: float | None = None
    height_contained: float | None = None
    split_angle: float | None = None
    scale_limit: float | None = None
    n_opt_grid: int = 1024
    square_grid: int = 21


@dataclass
class ChaosLedger:
    params: object
    rate_margin: float
    jacobian_bound: float
    jacobian_measured: float
    rate_excess: float
    scale: float
    scale_limit: float
    section_radius: float
    height_escape: float
    height_max: float
    beta: float
    square_half_width: float
    square: CertifiedSquare | None
    height_contained: float
    level_high: float
    level_low: float
    level_exponent: float
    level_factor: float
    angle_max_low: float
    angle_min_high: float
    split_angle: float
    slacks: dict
    system: ReturnMap | None = None

    @property
    def flags(self) -> dict:
        return {k: bool(self.slacks[k] > 0) for k in FLAG_ORDER}

    @property
    def feasible(self) -> bool:
        return all(self.flags.values())

    @property
    def first_failure(self) -> str | None:
        for k in FLAG_ORDER:
            if not self.slacks[k] > 0:
                return k
        return None

    def require_feasible(self) -> "ChaosLedger":
        name = self.first_failure
        if name is not None:
            raise LedgerInfeasible(name, self.slacks[name], f"ledger infeasible at {name} (slack {self.slacks[name]:.6g})")
        return self

    def as_dict(self) -> dict:
        d = {
            "sigma": self.params.sigma,
            "mu": self.params.mu,
            "u": self.params.u,
            "rate_margin": self.rate_margin,
            "jacobian_bound": self.jacobian_bound,
            "jacobian_measured": self.jacobian_measured,
            "rate_excess": self.rate_excess,
            "scale": self.scale,
            "scale_limit": self.scale_limit,
            "section_radius": self.section_radius,
            "height_escape": self.height_escape,
            "height_max": self.height_max,
            "beta": self.beta,
            "square_half_width": self.square_half_width,
            "height_contained": self.height_contained,
            "level_high": self.level_high,
            "level_low": self.level_low,
            "level_exponent": self.level_exponent,
            "level_factor": self.level_factor,
            "angle_max_low": self.angle_max_low,
            "angle_min_high": self.angle_min_high,
            "split_angle": self.split_angle,
            "feasible": self.feasible,
        }
        d["slacks"] = {k: self.slacks[k] for k in FLAG_ORDER}
        return d

    def options(self) -> LedgerOptions:
        """Options that rebuild this ledger with every quantity pinned."""
        return LedgerOptions(
            rate_margin=self.rate_margin,
            beta=self.beta,
            level_high=self.level_high,
            level_low=self.level_low,
            jacobian_bound=self.jacobian_bound,
            height_escape=self.height_escape,
            height_max=self.height_max,
            square_half_width=self.square_half_width,
            height_contained=self.height_contained,
            split_angle=self.split_angle,
            scale_limit=self.scale_limit,
        )


def _nan_safe(f, *a):
    try:
        v = f(*a)
    except (ValueError, ZeroDivisionError, OverflowError, LedgerInfeasible):
        return math.nan
    return v


def _extreme_angle(rmap: ReturnMap, half_width: float, level: float, n_grid: int, which: str) -> float:
    """max (which='max') or min of the exit angle over ``[-w, w]`` at a fixed height."""
    sign = 1.0 if which == "max" else -1.0
    g = np.linspace(-half_width, half_width, n_grid)
    vals = np.array([rmap.exit_angle(float(p), level) for p in g])
    i = int(np.argmax(sign * vals))
    best = float(vals[i])
    lo = g[max(i - 1, 0)]
    hi = g[min(i + 1, n_grid - 1)]
    if hi > lo:
        res = minimize_scalar(lambda p: -sign * rmap.exit_angle(float(p), level), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-13 * max(half_width, 1e-300)})
        if res.success and sign * -res.fun > sign * best:
            best = float(-sign * res.fun) if sign > 0 else float(res.fun)
    return best


def build_ledger(
    flow: FlowModel,
    plane: PlaneChart,
    exterior,
    omega: float,
    options: LedgerOptions,
    scale: float = 1.0,
    section_radius: float = math.inf,
) -> ChaosLedger:
    """Choose every ledger quantity and evaluate each inequality separately.

    ``flow`` is the zoomed flow used by the inner passage.  Quantities given
    in ``options`` are used verbatim; the rest are picked automatically.
    The ledger is always returned; ``require_feasible`` raises on the first
    failing inequality.
    """
    p = flow.params
    o = options
    e = o.rate_margin
    sl: dict[str, float] = {}
    sl["eta_tilde_bound"] = min(p.mu, -p.sigma / 2.0) - e
    sp = _nan_safe(spiral_product, p, e)
    sl["spiral_exponent"] = 1.0 - sp if e < min(p.mu, p.u) else -math.inf
    c = _nan_safe(level_exponent, p, e)
    k = _nan_safe(level_factor, p, e)

    measured = linearization_error(flow)
    if o.jacobian_bound is not None:
        eta = o.jacobian_bound
    else:
        eta = max(1.25 * measured, eta_for_rate(p.sigma, e / 8.0)) if e > 0 else 1.25 * measured
    es = math.exp(p.sigma)
    sl["eta_smallness"] = min(eta, es / 2.0 - eta, math.exp(-p.sigma / 2.0) - 1.0 - eta * math.exp(-p.sigma),
                              eta - measured if eta >= measured else eta - measured)
    m = _nan_safe(rate_excess, eta, p.sigma)
    sl["m_below_eta_tilde"] = e - m if not math.isnan(m) else -math.inf

    if o.scale_limit is not None:
        scale_limit = o.scale_limit
    elif isinstance(flow, LinearFlow) or (isinstance(flow, ScaledFlow) and flow.is_linear):
        scale_limit = math.inf
    elif isinstance(flow, ScaledFlow):
        scale_limit = min(scale_for_linearization_error(flow.base, eta), scale_for_box(flow.base))
    else:
        scale_limit = math.inf if measured < eta else 0.0
    sl["scale_small"] = (scale_limit - scale) if math.isfinite(scale_limit) else math.inf

    esc_bound = escape_height_bound(p, section_radius) if math.isfinite(section_radius) else 1.0
    d_star = o.height_escape if o.height_escape is not None else 0.5 * min(1.0, esc_bound)
    need6 = 1.0 + (2.0 / p.sigma) * math.log(section_radius) if math.isfinite(section_radius) else -math.inf
    sl["inner_radius"] = min(escape_count_floor(d_star, p.u) - need6, 1.0 - d_star, d_star)

    h_bound = inner_height_bound(p, m, e) if not math.isnan(m) else 0.0
    d_j = o.height_max if o.height_max is not None else 0.5 * min(d_star, h_bound if h_bound > 0 else d_star)
    if not math.isnan(m) and m < e:
        s10 = escape_count_floor(d_j, p.u) - m / (e - m)
    else:
        s10 = -math.inf
    sl["inner_height"] = min(s10, d_star - d_j, d_j)

    rmap = ReturnMap(flow, CylinderChart(omega), plane, exterior, d_j, section_radius, None, scale)

    sq = None
    if o.square_half_width is not None:
        alpha = o.square_half_width
        from .sections import _square_report

        off, der = _square_report(exterior, alpha, o.square_grid, 1e-4)
        spread = float(np.linalg.norm(plane.v) + np.linalg.norm(plane.w))
        sq = CertifiedSquare(alpha, off <= o.beta and der <= o.beta and alpha * spread < section_radius, 0, off, der)
    else:
        cap = min(0.9 * d_j, 3.0)
        sq = certify_square(exterior, o.beta, cap, plane, section_radius, o.square_grid) if 0 < o.beta <= 0.5 else None
        alpha = sq.alpha if sq is not None else 0.9 * d_j
    if 0 < o.beta <= 0.5 and sq is not None:
        sl["square_certified"] = min(o.beta - sq.worst_offset, o.beta - sq.worst_derivative) if sq.certified else -1.0
        if sl["square_certified"] == 0.0:
            sl["square_certified"] = 1e-300
    else:
        sl["square_certified"] = -math.inf
    sl["alpha_below_delta_j"] = d_j - alpha

    formula = (2.0 * alpha / (3.0 * (plane.kappa_norm + 1.0))) ** (3.0 * p.u / -p.sigma)
    d_beta = o.height_contained if o.height_contained is not None else formula
    sl["delta_beta_bound"] = min(formula - d_beta, 2.0 * alpha / 3.0 - d_beta, d_beta - 1e-300) \
        if o.height_contained is not None else min(2.0 * alpha / 3.0 - d_beta, d_beta - 1e-300)
    if sl["delta_beta_bound"] == 0:  # a pinned value equal to the formula sits on the (closed) boundary
        sl["delta_beta_bound"] = 1e-300

    sep_bound = _nan_safe(level_separation_bound, p, e, plane.kappa_inv_norm)
    if o.level_high is not None:
        d2 = o.level_high
    else:
        d2 = 0.5 * min(d_beta, sep_bound if sep_bound == sep_bound else 0.0)
    sl["delta2_below_delta_beta"] = (d_beta - d2) / d_beta if d_beta > 0 else -math.inf
    s19 = _nan_safe(level_separation_slack, p, e, plane.kappa_inv_norm, d2) if d2 > 0 else math.nan
    sl["level_separation"] = s19 if s19 == s19 else -math.inf

    d1 = o.level_low if o.level_low is not None else (k * d2 ** c if d2 > 0 and c == c else 0.0)

    m1 = m2 = math.nan
    if 0 < d1 < d2 < d_j and 0 < alpha < math.pi:
        try:
            m1 = _extreme_angle(rmap, alpha, d1, o.n_opt_grid, "max")
            m2 = _extreme_angle(rmap, alpha, d2, o.n_opt_grid, "min")
        except (DomainViolation, PreconditionViolated, ValueError) as err:  # noqa: F841
            m1 = m2 = math.nan
    gap = m2 - m1
    sl["angle_gap"] = gap - 4.0 * math.pi if gap == gap else -math.inf

    w_ang = plane.w_angle
    lo_w, hi_w = m1 + math.pi, m2 - math.pi
    if o.split_angle is not None:
        psi_j = o.split_angle
    elif m1 == m1:
        mid = 0.5 * (lo_w + hi_w)
        psi_j = w_ang + 2.0 * math.pi * round((mid - w_ang) / (2.0 * math.pi))
    else:
        psi_j = math.nan
    sl["psi_j_window"] = min(psi_j - lo_w, hi_w - psi_j) if psi_j == psi_j and m1 == m1 else -math.inf
    if sl["psi_j_window"] == 0:
        sl["psi_j_window"] = 1e-300
    dir_err = math.hypot(math.cos(psi_j) - math.cos(w_ang), math.sin(psi_j) - math.sin(w_ang)) if psi_j == psi_j else math.inf
    sl["split_direction"] = 1e-9 - dir_err

    for key in sl:
        if sl[key] != sl[key]:
            sl[key] = -math.inf

    return ChaosLedger(
        params=p, rate_margin=e, jacobian_bound=eta, jacobian_measured=measured, rate_excess=m, scale=scale,
        scale_limit=scale_limit, section_radius=section_radius, height_escape=d_star, height_max=d_j,
        beta=o.beta, square_half_width=alpha, square=sq, height_contained=d_beta, level_high=d2, level_low=d1,
        level_exponent=c, level_factor=k, angle_max_low=m1, angle_min_high=m2, split_angle=psi_j, slacks=sl,
        system=rmap,
    )


# ---------------------------------------------------------------------------
# membership and the angle gap


def classify(ledger: ChaosLedger, psi: float, delta: float, phi: float | None = None) -> tuple[int | None, float]:
    """Band of a rectangle point: 0, 1 or None, with the distance of its exit angle to the band edges."""
    if phi is None:
        phi = ledger.system.exit_angle(psi, delta)
    s = ledger.split_angle
    if s - math.pi < phi < s:
        return 0, min(phi - (s - math.pi), s - phi)
    if s < phi < s + math.pi:
        return 1, min(phi - s, s + math.pi - phi)
    return None, 0.0


def in_rectangle(ledger: ChaosLedger, psi: float, delta: float) -> bool:
    return abs(psi) <= ledger.square_half_width and ledger.level_low <= delta <= ledger.level_high


@dataclass
class GapReport:
    gap: float
    margin: float
    min_high: float
    max_low: float
    refined_gap: float

    @property
    def grid_change(self) -> float:
        return abs(self.refined_gap - self.gap)


def _gap_on_grid(rmap, d1, d2, n):
    edge = math.pi * (1.0 - 1e-12)
    g = np.linspace(-edge, edge, n)
    hi = min(rmap.exit_angle(float(p), d2) for p in g)
    lo = max(rmap.exit_angle(float(p), d1) for p in g)
    return hi, lo


def angle_gap(ledger: ChaosLedger, n_grid: int = 1024, raise_on_violation: bool = True) -> GapReport:
    """Smallest exit angle at the upper level minus largest at the lower level, over all offsets."""
    rmap = ledger.system
    hi, lo = _gap_on_grid(rmap, ledger.level_low, ledger.level_high, n_grid)
    hi2, lo2 = _gap_on_grid(rmap, ledger.level_low, ledger.level_high, 2 * n_grid - 1)
    rep = GapReport(hi - lo, hi - lo - 4.0 * math.pi, hi, lo, hi2 - lo2)
    if raise_on_violation and rep.margin < 0:
        raise GapViolated(f"angle gap {rep.gap:.6g} below 4 pi")
    return rep


# ---------------------------------------------------------------------------
# curves


class VerticalSegment:
    """``w -> (psi, low + w (high - low))`` on ``[0, 1]``."""

    def __init__(self, low: float, high: float, psi: float = 0.0):
        self.low, self.high, self.psi = low, high, psi

    def __call__(self, w: float) -> np.ndarray:
        return np.array([self.psi, self.low + w * (self.high - self.low)])


class ReversedCurve:
    def __init__(self, curve):
        self.curve = curve

    def __call__(self, w):
        return self.curve(1.0 - w)


class PiecewiseChebyshev:
    """Adaptive piecewise Chebyshev interpolant of a vector function on ``[0, 1]``."""

    def __init__(self, f: Callable, tol: float, degree: int = 16, min_width: float = 1e-13):
        self.tol = float(tol)  # relative to the largest value on a piece
        self.degree = degree
        self.pieces: list[tuple[float, float, np.ndarray]] = []
        self.evaluations = 0
        stack = [(0.0, 1.0)]
        while stack:
            lo, hi = stack.pop()
            coef, ok = self._fit(f, lo, hi)
            if ok:
                self.pieces.append((lo, hi, coef))
            elif hi - lo < min_width:
                raise RefinementFailed("curve interpolation did not converge", diagnostic="interpolation")
            else:
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi))
                stack.append((lo, mid))
        self.pieces.sort(key=lambda t: t[0])
        self._breaks = np.array([pc[0] for pc in self.pieces[1:]])

    def _fit(self, f, lo, hi):
        n = self.degree
        x = np.cos(np.pi * np.arange(n + 1) / n)[::-1]
        w = lo + 0.5 * (x + 1.0) * (hi - lo)
        vals = np.array([f(float(t)) for t in w])
        self.evaluations += len(w)
        coef = C.chebfit(x, vals, n)
        tail = float(np.max(np.abs(coef[-3:])))
        return coef, tail <= self.tol * float(np.max(np.abs(vals)))

    def __call__(self, w: float) -> np.ndarray:
        i = int(np.searchsorted(self._breaks, w, side="right"))
        lo, hi, coef = self.pieces[i]
        x = 2.0 * (w - lo) / (hi - lo) - 1.0
        return C.chebval(x, coef)


@dataclass(frozen=True)
class AffineMap:
    """Exact map from a stage parameter to its parent's: ``parent = shift + slope * w``."""

    shift: Fraction
    slope: Fraction

    def __call__(self, w: Fraction) -> Fraction:
        return self.shift + self.slope * w

    def image(self) -> tuple[Fraction, Fraction]:
        a, b = self(Fraction(0)), self(Fraction(1))
        return (a, b) if a <= b else (b, a)


# ---------------------------------------------------------------------------
# crossings and refinement


def _scan(fun, lo: float, hi: float, n0: int = 65, max_step: float = math.pi / 4, max_depth: int = 60):
    """Samples of ``fun`` on ``[lo, hi]``, subdivided until neighbours differ by at most ``max_step``."""
    ws = list(np.linspace(lo, hi, n0))
    vs = [fun(w) for w in ws]
    out_w, out_v = [ws[0]], [vs[0]]
    stack = [(ws[i], vs[i], ws[i + 1], vs[i + 1], 0) for i in range(len(ws) - 1)][::-1]
    while stack:
        a, fa, b, fb, d = stack.pop()
        if abs(fb - fa) > max_step and d < max_depth and b - a > 1e-15:
            m = 0.5 * (a + b)
            fm = fun(m)
            stack.append((m, fm, b, fb, d + 1))
            stack.append((a, fa, m, fm, d + 1))
        else:
            out_w.append(b)
            out_v.append(fb)
    return np.array(out_w), np.array(out_v)


def _root(fun, a, b, fa=None, fb=None):
    if fa is not None and fa == 0.0:
        return a
    if fb is not None and fb == 0.0:
        return b
    return brentq(fun, a, b, xtol=1e-18, rtol=1e-15, maxiter=200)


def _first_crossing(ws, vs, level, start, direction, fun):
    """First (direction=+1) or last (direction=-1) crossing of ``level`` after/before ``start``."""
    idx = range(len(ws) - 1) if direction > 0 else range(len(ws) - 2, -1, -1)
    for i in idx:
        a, b = ws[i], ws[i + 1]
        if direction > 0 and b <= start:
            continue
        if direction < 0 and a >= start:
            continue
        fa, fb = vs[i] - level, vs[i + 1] - level
        if fa == 0.0 or fb == 0.0 or (fa < 0) != (fb < 0):
            r = _root(lambda w: fun(w) - level, a, b, fa, fb)
            if (direction > 0 and r > start) or (direction < 0 and r < start):
                return r
    return None


@dataclass
class AngleCrossings:
    a0: float
    b0: float
    a1: float
    b1: float


def angle_crossings(ledger: ChaosLedger, curve, lo: float = 0.0, hi: float = 1.0) -> AngleCrossings:
    """Parameters where the exit angle along ``curve`` passes the band edges.

    On ``(a0, b0)`` the angle lies in the band below the split angle, on
    ``(a1, b1)`` in the band above; ``a0 < b0 <= a1 < b1``.  A curve running
    from the upper level to the lower one is handled by reversing it.
    """
    rmap = ledger.system
    p0, p1 = curve(lo), curve(hi)
    if p0[1] > p1[1]:
        rc = ReversedCurve(curve)
        cr = angle_crossings(ledger, rc, 1.0 - hi, 1.0 - lo)
        return AngleCrossings(1.0 - cr.b1, 1.0 - cr.a1, 1.0 - cr.b0, 1.0 - cr.a0)

    def phi(w):
        pt = curve(w)
        return rmap.exit_angle(float(pt[0]), float(pt[1]))

    ws, vs = _scan(phi, lo, hi)
    s = ledger.split_angle
    t = _first_crossing(ws, vs, s, lo - 1.0, +1, phi)
    if t is None:
        raise CrossingNotFound("exit angle never reaches the split angle along the curve")
    b1 = _first_crossing(ws, vs, s + math.pi, t, +1, phi)
    if b1 is None:
        raise CrossingNotFound("exit angle never reaches the upper band edge")
    a1 = _first_crossing(ws, vs, s, b1, -1, phi)
    a0 = _first_crossing(ws, vs, s - math.pi, a1, -1, phi)
    if a0 is None:
        raise CrossingNotFound("exit angle never reaches the lower band edge")
    b0 = _first_crossing(ws, vs, s, a0, +1, phi)
    if b0 is None or not (a0 < b0 <= a1 < b1):
        raise CrossingNotFound("crossings out of order")
    return AngleCrossings(a0, b0, a1, b1)


def _band_scan(fun, lo, hi, d1, d2, n0=33, max_depth=60):
    """Samples of the height coordinate, refined wherever neighbours straddle the band loosely."""
    band = d2 - d1
    ws = list(np.linspace(lo, hi, n0))
    vs = [fun(w) for w in ws]
    out_w, out_v = [ws[0]], [vs[0]]
    stack = [(ws[i], vs[i], ws[i + 1], vs[i + 1], 0) for i in range(len(ws) - 1)][::-1]
    while stack:
        a, fa, b, fb, d = stack.pop()
        near = min(fa, fb) <= d2 + band and max(fa, fb) >= d1 - band
        if near and abs(fb - fa) > band and d < max_depth and b - a > 1e-15:
            m = 0.5 * (a + b)
            fm = fun(m)
            stack.append((m, fm, b, fb, d + 1))
            stack.append((a, fa, m, fm, d + 1))
        else:
            out_w.append(b)
            out_v.append(fb)
    return np.array(out_w), np.array(out_v)


@dataclass
class Refinement:
    symbol: int
    crossings: AngleCrossings
    a: float  # level crossings on the parent curve
    b: float
    map: AffineMap  # child parameter -> parent parameter
    curve: object  # the child curve on [0, 1]


def refine_curve(ledger: ChaosLedger, curve, symbol: int, interp_degree: int = 16, interp_tol: float = 1e-12,
                 build_image: bool = True) -> Refinement:
    """Sub-arc of ``curve`` in band ``symbol`` whose image joins the two levels, and that image.

    The image is re-parametrized over ``[0, 1]`` so that it starts on the lower
    level; for symbol 1 this reverses the orientation.
    """
    if symbol not in (0, 1):
        raise PreconditionViolated("symbol must be 0 or 1")
    rmap = ledger.system
    d1, d2 = ledger.level_low, ledger.level_high
    try:
        cr = angle_crossings(ledger, curve)
    except CrossingNotFound as err:
        raise RefinementFailed(str(err), diagnostic="angle crossings") from err

    def q2(w):
        pt = curve(w)
        return float(rmap(float(pt[0]), float(pt[1]))[1])

    lo, hi = (cr.a0, cr.b0) if symbol == 0 else (cr.a1, cr.b1)
    ws, vs = _band_scan(q2, lo, hi, d1, d2)
    if symbol == 0:
        if not (vs[0] < -d2 and vs[-1] > d2):
            raise RefinementFailed("image heights at the band edges do not straddle the levels",
                                   diagnostic="vertical levels")
        b = _first_crossing(ws, vs, d2, lo, +1, q2)
        a = _first_crossing(ws, vs, d1, b, -1, q2) if b is not None else None
    else:
        if not (vs[0] > d2 and vs[-1] < -d2):
            raise RefinementFailed("image heights at the band edges do not straddle the levels",
                                   diagnostic="vertical levels")
        b = _first_crossing(ws, vs, d1, lo, +1, q2)
        a = _first_crossing(ws, vs, d2, b, -1, q2) if b is not None else None
    if a is None or b is None or not a < b:
        raise RefinementFailed("level crossings not found", diagnostic="level crossings")
    fa, fb = Fraction(a), Fraction(b)
    amap = AffineMap(fa, fb - fa) if symbol == 0 else AffineMap(fb, fa - fb)
    a_f, s_f = float(amap.shift), float(amap.slope)

    def image(w):
        pt = curve(a_f + s_f * w)
        return rmap(float(pt[0]), float(pt[1]))

    # the exit point is known to a few ulps of its size, so both coordinates share that floor
    child = PiecewiseChebyshev(image, interp_tol, interp_degree) if build_image else None
    return Refinement(symbol, cr, a, b, amap, child)


# ---------------------------------------------------------------------------
# symbol sequences and shadowing


@dataclass
class SymbolSeq:
    symbols: list[int]
    offset: int = 0

    def __post_init__(self):
        if any(s not in (0, 1) for s in self.symbols):
            raise PreconditionViolated("symbols must be 0 or 1")

    def __len__(self):
        return len(self.symbols)

    def __str__(self):
        return "".join(str(s) for s in self.symbols)

    def at(self, n: int) -> int:
        return self.symbols[n - self.offset]

    @classmethod
    def parse(cls, text: str) -> "SymbolSeq":
        """``"0110"`` or with repeats ``"0^5 1"``; a ``"w:"`` prefix centres the sequence at 0.

        An exponent takes every digit after ``^``, so a block following it
        needs a space: ``"0^3 1"``, not ``"0^31"``.
        """
        window = text.startswith("w:")
        body = text[2:] if window else text
        tokens = body.split()
        if not tokens:
            raise PreconditionViolated("empty symbol sequence")
        out: list[int] = []
        for tok in tokens:
            pos = 0
            for m in re.finditer(r"([01]+)(?:\^(\d+))?", tok):
                if m.start() != pos:
                    raise PreconditionViolated(f"bad symbol text {text!r}")
                rep = int(m.group(2)) if m.group(2) else 1
                out.extend(int(ch) for ch in m.group(1) * rep)
                pos = m.end()
            if pos != len(tok):
                raise PreconditionViolated(f"bad symbol text {text!r}")
        if not out:
            raise PreconditionViolated("empty symbol sequence")
        if window:
            if len(out) % 2 == 0:
                raise PreconditionViolated("a window sequence needs odd length")
            return cls(out, -(len(out) // 2))
        return cls(out, 0)


@dataclass
class TrajectoryRecord:
    points: np.ndarray  # rows (psi, delta)
    symbols: SymbolSeq
    phis: np.ndarray
    bands: list
    margins: np.ndarray
    residuals: np.ndarray  # |Q(x_n) - x_{n+1}|
    heights_next: np.ndarray  # second component of Q(x_n)
    in_rectangle: list
    intervals: list  # global parameter intervals (Fractions)
    parameter: Fraction

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))

    @property
    def verified(self) -> bool:
        ok_band = all(b == s for b, s in zip(self.bands, self.symbols.symbols))
        return bool(ok_band and self.min_margin > 0 and self.max_residual < 1e-9 and all(self.in_rectangle))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "s_n", "psi", "delta", "Phi", "margin", "residual"])
        for i, (pt, ph, mg) in enumerate(zip(self.points, self.phis, self.margins)):
            res = self.residuals[i] if i < len(self.residuals) else math.nan
            w.writerow([i + self.symbols.offset, self.symbols.symbols[i], format(float(pt[0]), ".17g"),
                        format(float(pt[1]), ".17g"), format(float(ph), ".17g"), format(float(mg), ".17g"),
                        format(float(res), ".17g")])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _verify(ledger: ChaosLedger, pts: np.ndarray, seq: SymbolSeq):
    rmap = ledger.system
    phis, bands, margins, res, nxt, inr = [], [], [], [], [], []
    for i, pt in enumerate(pts):
        rp = rmap.evaluate(float(pt[0]), float(pt[1]))
        band, mg = classify(ledger, float(pt[0]), float(pt[1]), rp.phi)
        phis.append(rp.phi)
        bands.append(band)
        margins.append(mg if band == seq.symbols[i] else -mg)
        nxt.append(rp.q2)
        inr.append(in_rectangle(ledger, float(pt[0]), float(pt[1])) and ledger.level_low <= rp.q2 <= ledger.level_high)
        if i + 1 < len(pts):
            res.append(float(np.linalg.norm(rp.q - pts[i + 1])))
    return np.array(phis), bands, np.array(margins), np.array(res), np.array(nxt), inr


def shadow_forward(ledger: ChaosLedger, symbols: SymbolSeq | str | Sequence[int], interp_degree: int = 16) -> TrajectoryRecord:
    """Trajectory of the return map visiting the prescribed bands, verified by direct iteration."""
    if isinstance(symbols, str):
        symbols = SymbolSeq.parse(symbols)
    elif not isinstance(symbols, SymbolSeq):
        symbols = SymbolSeq(list(symbols))
    if len(symbols) == 0:
        raise PreconditionViolated("empty symbol sequence")
    curves = [VerticalSegment(ledger.level_low, ledger.level_high, 0.0)]
    maps: list[AffineMap] = []
    refs: list[Refinement] = []
    for n, s in enumerate(symbols.symbols):
        try:
            ref = refine_curve(ledger, curves[-1], s, interp_degree, build_image=n + 1 < len(symbols))
        except RefinementFailed as err:
            err.step = n
            raise
        refs.append(ref)
        maps.append(ref.map)
        curves.append(ref.curve)
    # local parameter of each point; the last one is the midpoint of the final arc
    N = len(symbols)
    w = [Fraction(0)] * N
    last = refs[-1]
    w[N - 1] = (Fraction(last.a) + Fraction(last.b)) / 2
    for n in range(N - 2, -1, -1):
        w[n] = maps[n](w[n + 1])
    pts = np.array([curves[n](float(w[n])) for n in range(N)])
    # nested global intervals: the selected arc of stage n, pulled back to the segment parameter
    intervals = []
    for n in range(N):
        lo, hi = Fraction(refs[n].a), Fraction(refs[n].b)
        for k in range(n - 1, -1, -1):
            lo, hi = maps[k](lo), maps[k](hi)
            lo, hi = min(lo, hi), max(lo, hi)
        intervals.append((lo, hi))
    for (a0, b0), (a1, b1) in zip(intervals, intervals[1:]):
        if not (a0 <= a1 < b1 <= b0):
            raise RefinementFailed("refinement intervals are not nested", diagnostic="nesting")
    phis, bands, margins, res, nxt, inr = _verify(ledger, pts, symbols)
    return TrajectoryRecord(pts, symbols, phis, bands, margins, res, nxt, inr, intervals, w[0])


@dataclass
class WindowRun:
    record: TrajectoryRecord
    depths: list
    centres: np.ndarray  # z_{k,0} for each depth
    differences: np.ndarray

    @property
    def rounding_floor(self) -> float:
        """Differences below this are indistinguishable from rounding of the centre point."""
        return 64.0 * np.finfo(float).eps * float(np.max(np.linalg.norm(self.centres, axis=1)))

    @property
    def decreasing(self) -> bool:
        """Each difference is at most the previous one, or already at the rounding floor."""
        d = self.differences
        fl = self.rounding_floor
        return bool(np.all((d[1:] <= d[:-1]) | (d[1:] <= fl)))


def shadow_window(ledger: ChaosLedger, symbols: SymbolSeq | str, depths=(2, 4, 8, 16), max_length: int = 257,
                  interp_degree: int = 16) -> WindowRun:
    """Finite-window stand-in for an entire trajectory.

    For each depth k the forward trajectory of ``s_{-k}, ..., s_K`` is built
    and shifted by k, so its point at index 0 carries symbol ``s_0``.  The
    table of these centre points shows how they settle as k grows.
    """
    if isinstance(symbols, str):
        symbols = SymbolSeq.parse(symbols)
    K = -symbols.offset
    if len(symbols) != 2 * K + 1:
        raise PreconditionViolated("window sequences run from -K to K")
    if len(symbols) > max_length:
        raise WindowBudgetExceeded(f"window of {len(symbols)} symbols exceeds {max_length}")
    ks = sorted({k for k in depths if k <= K} | {K})
    centres, run = [], None
    for k in ks:
        sub = SymbolSeq([symbols.at(n) for n in range(-k, K + 1)], -k)
        run = shadow_forward(ledger, sub, interp_degree)
        centres.append(run.points[k])
    centres = np.array(centres)
    diffs = np.linalg.norm(np.diff(centres, axis=0), axis=1) if len(centres) > 1 else np.zeros(0)
    return WindowRun(run, ks, centres, diffs)


def membership(ledger: ChaosLedger, psi: float, delta: float) -> str:
    """``"M0"``, ``"M1"`` or ``"neither"`` for a point of the plane."""
    if not in_rectangle(ledger, psi, delta):
        return "neither"
    band, _ = classify(ledger, psi, delta)
    return "neither" if band is None else f"M{band}"


@dataclass
class EdgeHeight:
    psi: float
    delta: float
    phi: float
    target: float
    q2: float


def height_for_angle(ledger: ChaosLedger, psi: float, target: float) -> EdgeHeight:
    """Height in ``[level_low, level_high]`` where the exit angle at offset ``psi`` equals ``target``.

    The exit angle decreases as the height drops, so a bracketing search in
    ``log delta`` finds the crossing.
    """
    rmap = ledger.system

    def f(logd):
        return rmap.exit_angle(psi, math.exp(logd)) - target

    lo, hi = math.log(ledger.level_low), math.log(ledger.level_high)
    flo, fhi = f(lo), f(hi)
    if (flo > 0) == (fhi > 0):
        raise CrossingNotFound(f"angle {target:.6g} not attained between the levels at psi={psi:.6g}")
    logd = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    rp = rmap.evaluate(psi, math.exp(logd))
    return EdgeHeight(psi, math.exp(logd), rp.phi, target, rp.q2)


gap_check = angle_gap
curve_angle_crossings = angle_crossings
shadow_entire_window = shadow_window
m_eta_sigma = rate_excess
