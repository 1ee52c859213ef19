"""Charts on the two sections and the return map in the plane.

The entry cylinder ``M_I = {|P_L x| = 1}`` is parametrized by an angle
offset ``psi`` from the base exit angle ``omega`` and the height ``delta``.
The exit plane ``M_E = {x3 = 1}`` near ``e3`` is parametrized by
coordinates along a basis ``v, w`` of the stable plane, chosen so that the
exterior map has identity derivative at the origin.

``ReturnMap`` composes chart, inner passage, exterior map and inverse chart.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .angles import exit_angle_from_hit
from .errors import (
    DomainViolation,
    EstimateViolated,
    LedgerInfeasible,
    NoEscape,
    PreconditionViolated,
    RadiusMiss,
)
from .flow import FlowModel, LevelHit
from .geometry import E3, stable_norm, wrap_angle
from .homoclinic import SectionTimes, exterior_travel_time


@dataclass(frozen=True)
class CylinderChart:
    omega: float

    def point(self, psi: float, delta: float) -> np.ndarray:
        a = self.omega + psi
        return np.array([math.cos(a), math.sin(a), delta])

    def coords(self, z) -> tuple[float, float]:
        z = np.asarray(z, dtype=float)
        if stable_norm(z) == 0.0:
            raise DomainViolation("point on the unstable axis has no cylinder angle")
        psi = wrap_angle(math.atan2(z[1], z[0]) - self.omega)
        if psi == -math.pi:
            raise DomainViolation("point lies on the excluded ray opposite the base angle")
        return psi, float(z[2])


class PlaneChart:
    """Coordinates ``(xi, eta)`` of ``e3 + xi v + eta w`` on the exit plane."""

    def __init__(self, v, w):
        v = np.asarray(v, dtype=float)[:2]
        w = np.asarray(w, dtype=float)[:2]
        basis = np.column_stack([v, w])
        if abs(np.linalg.det(basis)) < 1e-14 * (np.linalg.norm(v) * np.linalg.norm(w) + 1e-300):
            raise PreconditionViolated("v and w must be linearly independent")
        self.v = np.array([v[0], v[1], 0.0])
        self.w = np.array([w[0], w[1], 0.0])
        self.basis = basis
        self.inverse_basis = np.linalg.inv(basis)
        self.kappa_norm = float(np.linalg.norm(self.inverse_basis, 2))
        self.kappa_inv_norm = float(np.linalg.norm(basis, 2))

    @property
    def w_angle(self) -> float:
        return math.atan2(self.w[1], self.w[0])

    def coords(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.inverse_basis @ y[:2]

    def point(self, zeta) -> np.ndarray:
        z = np.asarray(zeta, dtype=float)
        return E3 + z[0] * self.v + z[1] * self.w

    def describe(self) -> dict:
        return {"v": self.v[:2].tolist(), "w": self.w[:2].tolist(), "kappa_norm": self.kappa_norm,
                "kappa_inv_norm": self.kappa_inv_norm}


def _sine_shape(z):
    return 0.5 * np.array([math.sin(z[0]) * z[1], math.sin(z[1]) * z[0]])


def _sine_shape_jacobian(z):
    return 0.5 * np.array([[math.cos(z[0]) * z[1], math.sin(z[0])], [math.sin(z[1]), math.cos(z[1]) * z[0]]])


class CoordinateExterior:
    """Exterior map given directly in coordinates: ``zeta + beta_model * shape(zeta)``."""

    mode = "coordinate-model"

    def __init__(self, beta_model: float = 0.0, shape: str | Callable = "sine", shape_jacobian: Callable | None = None):
        if beta_model < 0:
            raise PreconditionViolated("beta_model must be non-negative")
        self.beta_model = float(beta_model)
        if shape == "sine":
            self.shape, self.shape_jacobian, self.shape_name = _sine_shape, _sine_shape_jacobian, "sine"
        elif shape == "identity":
            self.shape = lambda z: np.zeros(2)
            self.shape_jacobian = lambda z: np.zeros((2, 2))
            self.shape_name = "identity"
            self.beta_model = 0.0
        else:
            if shape_jacobian is None:
                raise PreconditionViolated("a custom shape needs its jacobian")
            self.shape, self.shape_jacobian, self.shape_name = shape, shape_jacobian, "custom"

    def __call__(self, zeta) -> np.ndarray:
        z = np.asarray(zeta, dtype=float)
        if self.beta_model == 0.0:
            return z.copy()
        return z + self.beta_model * self.shape(z)

    def jacobian(self, zeta) -> np.ndarray:
        return np.eye(2) + self.beta_model * self.shape_jacobian(np.asarray(zeta, dtype=float))

    def describe(self) -> dict:
        return {"mode": self.mode, "beta_model": self.beta_model, "shape": self.shape_name}


class FlowTracedExterior:
    """Exterior map obtained by following a flow from the exit plane back to the cylinder.

    The plane chart is normalized so the map has identity derivative at 0;
    the derivative is taken by central differences with step ``fd_step``.
    """

    mode = "flow-traced"

    def __init__(self, flow: FlowModel, st: SectionTimes, fd_step: float = 1e-6):
        self.flow = flow
        self.st = st
        self.cylinder = CylinderChart(st.omega_j)
        self.fd_step = fd_step
        e = E3.copy()
        self.base_time = exterior_travel_time(flow, st, e)
        cols = []
        for d in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
            a = np.array(self._raw(e + fd_step * d))
            b = np.array(self._raw(e - fd_step * d))
            cols.append((a - b) / (2 * fd_step))
        m = np.column_stack(cols)
        if abs(np.linalg.det(m)) < 1e-12:
            raise PreconditionViolated("exterior map derivative at e3 is singular")
        vw = np.linalg.inv(m)
        self.plane = PlaneChart(vw[:, 0], vw[:, 1])

    def map_point(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        t = exterior_travel_time(self.flow, self.st, y)
        return self.flow.eval(t, y)

    def _raw(self, y):
        return self.cylinder.coords(self.map_point(y))

    def __call__(self, zeta) -> np.ndarray:
        return np.array(self._raw(self.plane.point(zeta)))

    def jacobian(self, zeta, h: float | None = None) -> np.ndarray:
        h = self.fd_step if h is None else h
        z = np.asarray(zeta, dtype=float)
        cols = [(self(z + h * d) - self(z - h * d)) / (2 * h) for d in np.eye(2)]
        return np.column_stack(cols)

    def describe(self) -> dict:
        return {"mode": self.mode, "omega": self.st.omega_j, **self.plane.describe()}


@dataclass
class InnerHit:
    tau: float
    n: int
    endpoint: np.ndarray
    hit: LevelHit


def escape_count_floor(delta: float, u: float) -> float:
    """Lower bound for the number of whole time units spent before exit from height delta."""
    return math.log(1.0 / delta) / (u + math.log(2.0)) - 1.0


def inner_map(
    model: FlowModel,
    x,
    height_max: float,
    section_radius: float = math.inf,
    omega: float | None = None,
    rate_margin: float | None = None,
) -> InnerHit:
    """Follow ``x`` on the cylinder to the exit plane.

    Checks the domain, the escape-count floor, the travel-time bracket when a
    rate margin is given, and that the endpoint lands in the exit disk.
    """
    x = np.asarray(x, dtype=float)
    if abs(stable_norm(x) - 1.0) > 1e-9:
        raise DomainViolation("x must lie on the unit cylinder")
    if not 0.0 < x[2] < height_max:
        raise DomainViolation(f"height {x[2]} outside (0, {height_max})")
    if omega is not None:
        a = math.atan2(x[1], x[0])
        if abs(wrap_angle(a - omega)) >= math.pi - 1e-15:
            raise DomainViolation("x lies on the excluded ray")
    try:
        hit = model.level_hit(x)
    except NoEscape as err:
        raise DomainViolation(str(err)) from err
    p = model.params
    if not hit.n > escape_count_floor(x[2], p.u) - 1e-9:
        raise EstimateViolated(f"escape count {hit.n} below its floor {escape_count_floor(x[2], p.u):.6g}")
    if rate_margin is not None:
        lg = math.log(1.0 / x[2])
        lo, hi = lg / (p.u + rate_margin), lg / (p.u - rate_margin)
        slack = 1e-9 * (1.0 + hit.tau)
        if not lo - slack <= hit.tau <= hi + slack:
            raise EstimateViolated(f"travel time {hit.tau} outside [{lo}, {hi}]")
    end = hit.endpoint
    if stable_norm(end) >= section_radius:
        raise RadiusMiss(f"exit point at distance {stable_norm(end):.6g} from e3, radius {section_radius}")
    return InnerHit(hit.tau, hit.n, end, hit)


@dataclass
class ReturnPoint:
    psi: float
    delta: float
    q: np.ndarray
    phi: float
    tau: float
    n: int
    inner: np.ndarray  # plane coordinates of the exit point

    @property
    def q1(self) -> float:
        return float(self.q[0])

    @property
    def q2(self) -> float:
        return float(self.q[1])


class ReturnMap:
    """``(psi, delta) -> `` cylinder coordinates after one loop, with the exit angle."""

    def __init__(
        self,
        flow: FlowModel,
        cylinder: CylinderChart,
        plane: PlaneChart,
        exterior,
        height_max: float,
        section_radius: float = math.inf,
        rate_margin: float | None = None,
        scale: float | None = None,
    ):
        self.flow = flow
        self.params = flow.params
        self.cylinder = cylinder
        self.plane = plane
        self.exterior = exterior
        self.height_max = float(height_max)
        self.section_radius = float(section_radius)
        self.rate_margin = rate_margin
        self.scale = scale
        self.calls = 0

    @property
    def omega(self) -> float:
        return self.cylinder.omega

    def _check(self, psi, delta):
        if not -math.pi < psi < math.pi:
            raise DomainViolation(f"psi={psi} outside (-pi, pi)")
        if not 0.0 < delta < self.height_max:
            raise DomainViolation(f"delta={delta} outside (0, {self.height_max})")

    def inner(self, psi: float, delta: float) -> InnerHit:
        self._check(psi, delta)
        x = self.cylinder.point(psi, delta)
        return inner_map(self.flow, x, self.height_max, self.section_radius, None, self.rate_margin)

    def evaluate(self, psi: float, delta: float) -> ReturnPoint:
        self.calls += 1
        ih = self.inner(psi, delta)
        phi = exit_angle_from_hit(self.params, self.omega + psi, ih.hit)
        zeta = self.plane.coords(ih.endpoint)
        q = np.asarray(self.exterior(zeta), dtype=float)
        return ReturnPoint(psi, delta, q, phi, ih.tau, ih.n, zeta)

    def __call__(self, psi: float, delta: float) -> np.ndarray:
        return self.evaluate(psi, delta).q

    def exit_angle(self, psi: float, delta: float) -> float:
        return self.evaluate(psi, delta).phi

    def describe(self) -> dict:
        d = {
            "omega": self.omega,
            "height_max": self.height_max,
            "section_radius": self.section_radius,
            "plane": self.plane.describe(),
            "exterior": self.exterior.describe(),
            "flow": self.flow.describe() if hasattr(self.flow, "describe") else type(self.flow).__name__,
        }
        if self.scale is not None:
            d["scale"] = self.scale
        return d


@dataclass
class CertifiedSquare:
    alpha: float
    certified: bool
    halvings: int
    worst_offset: float  # max |E(z) - z| / |z| on the grid
    worst_derivative: float  # max |DE(z) - id| on the grid


def _square_report(exterior, alpha, n_grid, fd_step):
    g = np.linspace(-alpha, alpha, n_grid)
    worst_off = 0.0
    worst_der = 0.0
    for a in g:
        for b in g:
            z = np.array([a, b])
            r = math.hypot(a, b)
            e = np.asarray(exterior(z), dtype=float)
            if r > 0:
                worst_off = max(worst_off, float(np.linalg.norm(e - z)) / r)
            h = fd_step * max(alpha, 1e-300)
            cols = [(np.asarray(exterior(z + h * d)) - np.asarray(exterior(z - h * d))) / (2 * h) for d in np.eye(2)]
            jac = np.column_stack(cols)
            worst_der = max(worst_der, float(np.linalg.norm(jac - np.eye(2), 2)))
    return worst_off, worst_der


def certify_square(
    exterior,
    beta: float,
    cap: float,
    plane: PlaneChart | None = None,
    section_radius: float = math.inf,
    n_grid: int = 21,
    fd_step: float = 1e-4,
    max_halvings: int = 60,
) -> CertifiedSquare:
    """Half-width of a square on which the exterior map is within ``beta`` of the identity.

    Both the relative offset and the finite-difference derivative deviation
    are checked on an ``n_grid`` square grid; the square must also lie inside
    the exit disk.  A square that passes at ``cap`` is returned as is;
    otherwise the width is halved until it passes and then halved once more.
    """
    if not 0.0 < beta <= 0.5:
        raise PreconditionViolated("beta must lie in (0, 1/2]")
    if not 0.0 < cap < math.pi:
        raise PreconditionViolated("cap must lie in (0, pi)")
    spread = 1.0 if plane is None else float(np.linalg.norm(plane.v) + np.linalg.norm(plane.w))
    alpha = cap
    for k in range(max_halvings + 1):
        off, der = _square_report(exterior, alpha, n_grid, fd_step)
        ok = off <= beta and der <= beta and alpha * spread < section_radius
        if ok:
            if k == 0:
                return CertifiedSquare(alpha, True, 0, off, der)
            alpha *= 0.5
            off, der = _square_report(exterior, alpha, n_grid, fd_step)
            return CertifiedSquare(alpha, True, k + 1, off, der)
        alpha *= 0.5
    return CertifiedSquare(alpha, False, max_halvings + 1, off, der)


def contained_height(alpha: float, kappa_norm: float, sigma: float, u: float) -> float:
    """Height below which the square of half-width alpha is mapped into itself."""
    val = (2.0 * alpha / (3.0 * (kappa_norm + 1.0))) ** (3.0 * u / -sigma)
    if not val >= 1e-300:
        raise LedgerInfeasible("delta_beta_bound", val, f"contained height {val:.3g} underflows")
    if val > 2.0 * alpha / 3.0:
        raise LedgerInfeasible("delta_beta_bound", 2.0 * alpha / 3.0 - val, "contained height exceeds 2 alpha / 3")
    return val


def grid_report(rmap: ReturnMap, psis, deltas) -> list[dict]:
    rows = []
    for d in deltas:
        for p in psis:
            rp = rmap.evaluate(float(p), float(d))
            rows.append({"psi": rp.psi, "delta": rp.delta, "q1": rp.q1, "q2": rp.q2, "tau": rp.tau, "phi": rp.phi,
                         "inner_norm": float(np.linalg.norm(rp.inner))})
    return rows


def write_rows(rows: list[dict], path, columns: list[str] | None = None) -> None:
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)
