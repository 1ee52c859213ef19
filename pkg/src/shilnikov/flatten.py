"""Flattening a saddle-focus: eigenframe, local invariant manifolds, straightener.

Starting from a vector field with a hyperbolic saddle-focus at the origin the
pipeline produces a flow in which the stable plane ``L = span(e1, e2)`` and
the unstable line ``U = span(e3)`` are invariant near the origin:

1. ``eigenframe`` finds ``B`` with ``B^-1 DV(0) B = A``;
2. ``fit_local_manifolds`` fits polynomial graphs of the local stable and
   unstable manifolds in eigen-coordinates by trajectory regression;
3. ``extend_graph`` cuts them off smoothly to global graphs with small slope;
4. ``Straightener`` subtracts both graphs, mapping the manifolds to flat planes;
5. ``FlattenedFlow`` composes ``S``, the eigen-coordinate flow and ``S^-1``.

The straightener works in eigen-coordinates, so the flattened flow is
``S(G(t, S^-1(x)))`` with ``G`` the flow of ``B^-1 V(B y)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    ContractionStalled,
    FitDiverged,
    LambdaUnachievable,
    PreconditionViolated,
    SpectrumMismatch,
)
from .flow import FlowModel
from .geometry import StabilityParams, linear_flow_matrix

# ---------------------------------------------------------------------------
# vector fields


class VectorField:
    """A C^1 field with ``eval(x)`` and ``jacobian(x)``; checks are restricted to a ball of ``radius``."""

    radius: float = 1.0

    def eval(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def _check_equilibrium(self):
        if np.linalg.norm(self.eval(np.zeros(3))) > 1e-12:
            raise PreconditionViolated("the origin is not an equilibrium")


class LinearField(VectorField):
    def __init__(self, matrix, radius: float = 1.0):
        self.matrix = np.array(matrix, dtype=float).reshape(3, 3)
        self.radius = radius

    def eval(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def jacobian(self, x):
        return self.matrix.copy()


class PolynomialTestField(VectorField):
    """``A x + (k_u x3^2, 0, k_s (x1^2 + x2^2))``.

    With ``k_u = 0`` the stable manifold is exactly ``x3 = k_s r^2 / (2 sigma - u)``
    and the unstable axis is invariant; with ``k_s = 0`` the stable plane is
    invariant and the unstable manifold is an exact parabola.
    """

    def __init__(self, params: StabilityParams, stable_curvature: float = 0.0, unstable_curvature: float = 0.0,
                 radius: float = 1.0):
        self.params = params
        self.A = params.matrix
        self.ks = float(stable_curvature)
        self.ku = float(unstable_curvature)
        self.radius = radius

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        out = self.A @ x
        out[0] += self.ku * x[2] ** 2
        out[2] += self.ks * (x[0] ** 2 + x[1] ** 2)
        return out

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        J = self.A.copy()
        J[0, 2] += 2.0 * self.ku * x[2]
        J[2, 0] += 2.0 * self.ks * x[0]
        J[2, 1] += 2.0 * self.ks * x[1]
        return J

    def stable_graph_coefficient(self) -> float:
        """Coefficient of ``x1^2 + x2^2`` in the stable graph when ``k_u = 0``."""
        return self.ks / (2.0 * self.params.sigma - self.params.u)

    def unstable_graph_coefficients(self) -> np.ndarray:
        """``P`` with unstable graph ``(x1, x2) = P x3^2`` when ``k_s = 0``."""
        p = self.params
        M = 2.0 * p.u * np.eye(2) - self.A[:2, :2]
        return np.linalg.solve(M, np.array([self.ku, 0.0]))


class SimilarField(VectorField):
    """``M base(M^-1 x)``: the base field seen in skewed coordinates."""

    def __init__(self, base: VectorField, M):
        self.base = base
        self.M = np.array(M, dtype=float)
        self.Minv = np.linalg.inv(self.M)
        self.radius = base.radius / max(np.linalg.norm(self.Minv, 2), 1e-300)

    def eval(self, x):
        return self.M @ self.base.eval(self.Minv @ np.asarray(x, dtype=float))

    def jacobian(self, x):
        return self.M @ self.base.jacobian(self.Minv @ np.asarray(x, dtype=float)) @ self.Minv


def random_similarity(rng: np.random.Generator, max_condition: float = 10.0) -> np.ndarray:
    """A random matrix with condition number at most ``max_condition``."""
    while True:
        M = np.eye(3) + 0.5 * rng.standard_normal((3, 3))
        if np.linalg.cond(M) < max_condition:
            return M


# ---------------------------------------------------------------------------
# eigenframe


@dataclass
class EigenFrame:
    B: np.ndarray
    A: np.ndarray
    params: StabilityParams
    residual: float

    @property
    def Binv(self) -> np.ndarray:
        return np.linalg.inv(self.B)

    def describe(self) -> dict:
        return {"B": self.B.tolist(), **self.params.as_dict(), "residual": self.residual}


def eigenframe(vf: VectorField, imag_tol: float = 1e-8) -> EigenFrame:
    """Columns ``Re z, Im z, w`` from eigenvectors of ``DV(0)``.

    ``z`` belongs to ``sigma + i mu`` with ``mu > 0`` and ``w`` to ``u > 0``.
    The complex eigenvector is rotated so that its largest entry is real and
    scaled so that ``Re z`` has unit length.
    """
    J = vf.jacobian(np.zeros(3))
    vals, vecs = np.linalg.eig(J)
    cplx = [i for i in range(3) if vals[i].imag > imag_tol]
    real = [i for i in range(3) if abs(vals[i].imag) <= imag_tol]
    if len(cplx) != 1 or len(real) != 1:
        raise SpectrumMismatch(f"need one real eigenvalue and a complex pair, got {vals}")
    lam, u = vals[cplx[0]], vals[real[0]].real
    sigma, mu = lam.real, lam.imag
    if not (sigma < 0 < u):
        raise SpectrumMismatch(f"need sigma < 0 < u, got sigma={sigma}, u={u}")
    if not sigma + u > 0:
        raise SpectrumMismatch(f"saddle quantity sigma+u={sigma + u} must be positive")
    z = vecs[:, cplx[0]]
    mags = np.abs(z)
    k = int(np.flatnonzero(mags >= (1.0 - 1e-9) * mags.max())[0])
    z = z * (abs(z[k]) / z[k])
    w1, w2 = z.real, z.imag
    s = np.linalg.norm(w1)
    w1, w2 = w1 / s, w2 / s
    w = vecs[:, real[0]].real
    w = w / np.linalg.norm(w)
    w = w if w[int(np.argmax(np.abs(w)))] > 0 else -w
    B = np.column_stack([w1, w2, w])
    params = StabilityParams(float(sigma), float(mu), float(u))
    A = params.matrix
    res = float(np.linalg.norm(np.linalg.solve(B, J @ B) - A))
    if res > 1e-8:
        raise SpectrumMismatch(f"eigenframe conjugation residual {res:.3g}")
    return EigenFrame(B, A, params, res)


class FrameField:
    """The field in eigen-coordinates: ``B^-1 V(B y)``."""

    def __init__(self, vf: VectorField, frame: EigenFrame):
        self.vf, self.B, self.Binv = vf, frame.B, frame.Binv

    def eval(self, y):
        return self.Binv @ self.vf.eval(self.B @ np.asarray(y, dtype=float))

    def jacobian(self, y):
        return self.Binv @ self.vf.jacobian(self.B @ np.asarray(y, dtype=float)) @ self.B


def _integrate(g, y0, times, rtol=1e-12, atol=1e-15, with_jacobian=False):
    """States (and variational matrices) of ``y' = g(y)`` at ``times`` (all of one sign)."""
    times = np.asarray(times, dtype=float)
    t_end = float(times[np.argmax(np.abs(times))]) if times.size else 0.0
    y0 = np.asarray(y0, dtype=float)
    if with_jacobian:
        def rhs(t, Y):
            y = Y[:3]
            P = Y[3:].reshape(3, 3)
            return np.concatenate([g.eval(y), (g.jacobian(y) @ P).reshape(9)])
        Y0 = np.concatenate([y0, np.eye(3).reshape(9)])
    else:
        def rhs(t, Y):
            return g.eval(Y)
        Y0 = y0
    if t_end == 0.0:
        out = np.tile(Y0, (len(times), 1))
        return out
    sol = solve_ivp(rhs, (0.0, t_end), Y0, method="DOP853", t_eval=None, dense_output=True, rtol=rtol, atol=atol)
    if not sol.success:
        raise FitDiverged(f"integration failed: {sol.message}")
    out = np.array([Y0 if t == 0.0 else sol.sol(t) for t in times])
    return out


# ---------------------------------------------------------------------------
# manifold graphs


def _exponents(degree: int):
    return [(i, d - i) for d in range(2, degree + 1) for i in range(d, -1, -1)]


def _quintic_cutoff(s: float) -> tuple[float, float]:
    """1 on ``[0, 1]``, 0 beyond 2, C^2 in between; returns value and derivative."""
    if s <= 1.0:
        return 1.0, 0.0
    if s >= 2.0:
        return 0.0, 0.0
    t = s - 1.0
    return 1.0 - (10 * t**3 - 15 * t**4 + 6 * t**5), -(30 * t**2 - 60 * t**3 + 30 * t**4)


@dataclass
class ManifoldGraph:
    """Polynomial graphs in eigen-coordinates, optionally cut off beyond ``2 r_hat``.

    ``stable(x1, x2)`` gives the unstable coordinate over the stable plane;
    ``unstable(x3)`` gives the stable pair over the unstable axis.
    """

    degree: int
    stable_coef: np.ndarray  # one per exponent pair in _exponents(degree)
    unstable_coef: np.ndarray  # shape (degree - 1, 2): powers 2..degree
    radius: float
    r_hat: float | None = None
    lam: float | None = None
    defects: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, radius: float, degree: int = 1) -> "ManifoldGraph":
        d = max(degree, 1)
        return cls(d, np.zeros(len(_exponents(d))), np.zeros((max(d - 1, 0), 2)), radius)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.stable_coef) and not np.any(self.unstable_coef)

    # local polynomial parts
    def _ws(self, x):
        return float(sum(c * x[0] ** i * x[1] ** j for c, (i, j) in zip(self.stable_coef, _exponents(self.degree))))

    def _ws_grad(self, x):
        g = np.zeros(2)
        for c, (i, j) in zip(self.stable_coef, _exponents(self.degree)):
            if i:
                g[0] += c * i * x[0] ** (i - 1) * x[1] ** j
            if j:
                g[1] += c * j * x[0] ** i * x[1] ** (j - 1)
        return g

    def _wu(self, y):
        return sum(self.unstable_coef[k] * y ** (k + 2) for k in range(len(self.unstable_coef))) \
            if len(self.unstable_coef) else np.zeros(2)

    def _wu_deriv(self, y):
        return sum(self.unstable_coef[k] * (k + 2) * y ** (k + 1) for k in range(len(self.unstable_coef))) \
            if len(self.unstable_coef) else np.zeros(2)

    # global (cut-off) graphs
    def stable(self, x) -> float:
        x = np.asarray(x, dtype=float)[:2]
        if self.r_hat is None:
            return self._ws(x)
        chi, _ = _quintic_cutoff(math.hypot(x[0], x[1]) / self.r_hat)
        return chi * self._ws(x) if chi else 0.0

    def stable_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:2]
        if self.r_hat is None:
            return self._ws_grad(x)
        r = math.hypot(x[0], x[1])
        chi, dchi = _quintic_cutoff(r / self.r_hat)
        if chi == 0.0:
            return np.zeros(2)
        g = chi * self._ws_grad(x)
        if dchi:
            g = g + self._ws(x) * dchi / self.r_hat * x / r
        return g

    def unstable(self, y: float) -> np.ndarray:
        if self.r_hat is None:
            return np.asarray(self._wu(y), dtype=float)
        chi, _ = _quintic_cutoff(abs(y) / self.r_hat)
        return chi * np.asarray(self._wu(y), dtype=float) if chi else np.zeros(2)

    def unstable_deriv(self, y: float) -> np.ndarray:
        if self.r_hat is None:
            return np.asarray(self._wu_deriv(y), dtype=float)
        chi, dchi = _quintic_cutoff(abs(y) / self.r_hat)
        if chi == 0.0:
            return np.zeros(2)
        d = chi * np.asarray(self._wu_deriv(y), dtype=float)
        if dchi:
            d = d + np.asarray(self._wu(y), dtype=float) * dchi / self.r_hat * math.copysign(1.0, y)
        return d

    def slope_sup(self, n: int = 81) -> float:
        """Sampled sup of both graph derivatives over their support (or the fit radius)."""
        R = 2.0 * self.r_hat if self.r_hat is not None else self.radius
        g = np.linspace(-R, R, n)
        best = 0.0
        for a in g:
            best = max(best, float(np.linalg.norm(self.unstable_deriv(a))))
            for b in g:
                if a * a + b * b <= R * R:
                    best = max(best, float(np.linalg.norm(self.stable_grad((a, b)))))
        return best

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "stable_exponents": [list(e) for e in _exponents(self.degree)],
            "stable_coef": self.stable_coef.tolist(),
            "unstable_coef": self.unstable_coef.tolist(),
            "radius": self.radius,
            "r_hat": self.r_hat,
            "lambda": self.lam,
            "defects": self.defects,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldGraph":
        return cls(int(d["degree"]), np.array(d["stable_coef"], dtype=float),
                   np.array(d["unstable_coef"], dtype=float).reshape(-1, 2), float(d["radius"]),
                   d.get("r_hat"), d.get("lambda"), dict(d.get("defects", {})))


def _stable_design(x1, x2, degree, scale):
    return np.column_stack([(x1 / scale) ** i * (x2 / scale) ** j for i, j in _exponents(degree)])


def fit_local_manifolds(vf: VectorField, frame: EigenFrame, r: float, degree: int = 3, n_angles: int = 24,
                        n_samples: int = 40, seed_ratio: float = 1e-3, defect_tol: float = 1e-4) -> ManifoldGraph:
    """Polynomial graphs of the local stable and unstable manifolds on ``|.| <= r``.

    Stable manifold: seeds on a small circle in the stable plane are flowed
    backward, where the unstable coordinate contracts onto the manifold while
    the stable radius grows to ``r``.  The unstable manifold is traced the same
    way in forward time from seeds on the unstable axis.  The unstable (resp.
    stable) coordinates along those trajectories are regressed on monomials of
    degree 2..``degree``.
    """
    if not 0 < r <= vf.radius:
        raise PreconditionViolated(f"fit radius {r} outside the field's validity radius {vf.radius}")
    if degree < 2:
        warnings.warn("a graph of degree < 2 cannot carry curvature; returning the flat graph")
        return ManifoldGraph.zero(r, degree)
    g = FrameField(vf, frame)
    p = frame.params
    rho0 = seed_ratio * r

    # stable manifold: backward time
    T_s = math.log(r / rho0) / (-p.sigma)
    times = -np.linspace(0.3 * T_s, T_s, n_samples)
    pts = []
    for th in np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False):
        y0 = np.array([rho0 * math.cos(th), rho0 * math.sin(th), 0.0])
        st = _integrate(g, y0, times)
        keep = np.hypot(st[:, 0], st[:, 1]) <= r
        pts.append(st[keep])
    pts = np.vstack(pts)
    if len(pts) < 2 * len(_exponents(degree)):
        raise FitDiverged("too few stable-manifold samples inside the fit radius")
    D = _stable_design(pts[:, 0], pts[:, 1], degree, r)
    c_s, *_ = np.linalg.lstsq(D, pts[:, 2], rcond=None)
    scale_pow = np.array([r ** (i + j) for i, j in _exponents(degree)])
    c_s = c_s / scale_pow

    # unstable manifold: forward time, both branches
    T_u = math.log(r / rho0) / p.u
    times = np.linspace(0.3 * T_u, T_u, n_samples)
    upts = []
    for sgn in (1.0, -1.0):
        st = _integrate(g, np.array([0.0, 0.0, sgn * rho0]), times)
        upts.append(st[np.abs(st[:, 2]) <= r])
    upts = np.vstack(upts)
    V = np.column_stack([(upts[:, 2] / r) ** k for k in range(2, degree + 1)])
    c_u, *_ = np.linalg.lstsq(V, upts[:, :2], rcond=None)
    c_u = c_u / np.array([r**k for k in range(2, degree + 1)])[:, None]

    # coefficients whose whole contribution on the ball is regression noise are dropped
    c_s = np.where(np.abs(c_s) * scale_pow < 1e-12 * r, 0.0, c_s)
    upow = np.array([r**k for k in range(2, degree + 1)])[:, None]
    c_u = np.where(np.abs(c_u) * upow < 1e-12 * r, 0.0, c_u)
    graph = ManifoldGraph(degree, c_s, c_u, r)
    if not (np.all(np.isfinite(c_s)) and np.all(np.isfinite(c_u))):
        raise FitDiverged("non-finite graph coefficients")
    graph.defects = invariance_defects(g, graph, r)
    worst = max(graph.defects.values())
    if worst > defect_tol:
        raise FitDiverged(f"invariance defect {worst:.3g} exceeds {defect_tol}")
    return graph


def invariance_defects(g: FrameField, graph: ManifoldGraph, r: float, n: int = 200, seed: int = 7) -> dict:
    """Relative tangency residual of the field along both graphs at random validation points."""
    rng = np.random.default_rng(seed)
    worst_s = worst_u = 0.0
    for _ in range(n):
        rad = r * math.sqrt(rng.uniform(0.01, 1.0))
        th = rng.uniform(0, 2 * math.pi)
        x = np.array([rad * math.cos(th), rad * math.sin(th)])
        pnt = np.array([x[0], x[1], graph._ws(x)])
        f = g.eval(pnt)
        res = abs(f[2] - graph._ws_grad(x) @ f[:2]) / np.linalg.norm(f)
        worst_s = max(worst_s, float(res))
        y = rng.uniform(-r, r)
        if abs(y) < 1e-3 * r:
            continue
        wu = np.asarray(graph._wu(y), dtype=float)
        pnt = np.array([wu[0], wu[1], y])
        f = g.eval(pnt)
        res = np.linalg.norm(f[:2] - np.asarray(graph._wu_deriv(y)) * f[2]) / np.linalg.norm(f)
        worst_u = max(worst_u, float(res))
    return {"stable": worst_s, "unstable": worst_u}


def extend_graph(graph: ManifoldGraph, r_hat: float, lam: float = 0.1, min_r_hat: float | None = None,
                 shrink: float = 0.7) -> ManifoldGraph:
    """Cut both graphs off to zero beyond ``2 r_hat`` with a quintic bump.

    The sup of the derivative is sampled; while it is not below ``lam`` the
    radius shrinks by ``shrink``, down to ``min_r_hat`` (default ``r_hat / 8``).
    """
    if not 0 < r_hat < graph.radius:
        raise PreconditionViolated("r_hat must lie in (0, r)")
    floor = r_hat / 8.0 if min_r_hat is None else min_r_hat
    rh = r_hat
    while True:
        ext = ManifoldGraph(graph.degree, graph.stable_coef.copy(), graph.unstable_coef.copy(), graph.radius,
                            rh, lam, dict(graph.defects))
        sup = ext.slope_sup()
        if sup < lam:
            return ext
        if rh * shrink < floor:
            raise LambdaUnachievable(f"slope bound {lam} not reached; sup {sup:.3g} at r_hat={rh:.3g}", sup)
        rh *= shrink


# ---------------------------------------------------------------------------
# straightener


class Straightener:
    """``S(z) = z - (0, 0, ws(z1, z2)) - (wu(z3), 0)`` in eigen-coordinates."""

    def __init__(self, graph: ManifoldGraph, check_grid: int = 17):
        self.graph = graph
        self.derivative_gap = self._sample_gap(check_grid)
        if self.derivative_gap > 0.5:
            raise PreconditionViolated(f"|DS - id| reaches {self.derivative_gap:.3g} > 1/2")

    def _sample_gap(self, n):
        g = self.graph
        R = 2.0 * g.r_hat if g.r_hat is not None else g.radius
        grid = np.linspace(-R, R, n)
        worst = 0.0
        for a in grid:
            for b in grid:
                for c in grid:
                    worst = max(worst, float(np.linalg.norm(self.jacobian((a, b, c)) - np.eye(3), 2)))
        return worst

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        wu = self.graph.unstable(z[2])
        return np.array([z[0] - wu[0], z[1] - wu[1], z[2] - self.graph.stable(z[:2])])

    def jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        J = np.eye(3)
        J[:2, 2] -= self.graph.unstable_deriv(z[2])
        J[2, :2] -= self.graph.stable_grad(z[:2])
        return J

    def inverse(self, zeta, step_tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
        """Fixed point of ``z -> zeta - (S(z) - z)``, a contraction with factor 1/2."""
        zeta = np.asarray(zeta, dtype=float)
        z = zeta.copy()
        self.last_iterations = 0
        for k in range(1, max_iter + 1):
            wu = self.graph.unstable(z[2])
            z_new = np.array([zeta[0] + wu[0], zeta[1] + wu[1], zeta[2] + self.graph.stable(z[:2])])
            step = float(np.linalg.norm(z_new - z))
            z = z_new
            if step < step_tol:
                self.last_iterations = k
                return z
        raise ContractionStalled(f"no convergence in {max_iter} iterations (last step {step:.3g})")


def straighten(graph: ManifoldGraph) -> Straightener:
    return Straightener(graph)


# ---------------------------------------------------------------------------
# the flattened flow


class FlattenedFlow(FlowModel):
    """``F(t, x) = S(G(t, S^-1 x))`` with ``G`` the eigen-coordinate flow."""

    def __init__(self, vf: VectorField, frame: EigenFrame, straightener: Straightener, rtol: float = 1e-12,
                 atol: float = 1e-15, t_max: float = 1000.0):
        self.vf = vf
        self.frame = frame
        self.S = straightener
        self.g = FrameField(vf, frame)
        self.params = frame.params
        self.rtol, self.atol = rtol, atol
        self.t_max = t_max

    def field(self, x):
        x = np.asarray(x, dtype=float)
        y = self.S.inverse(x)
        return self.S.jacobian(y) @ self.g.eval(y)

    def states(self, x, times):
        times = np.asarray(times, dtype=float)
        y = self.S.inverse(x)
        out = np.empty((len(times), 3))
        for sgn in (1.0, -1.0):
            idx = np.flatnonzero(times * sgn > 0)
            if idx.size:
                ys = _integrate(self.g, y, times[idx], self.rtol, self.atol)
                out[idx] = [self.S(v) for v in ys]
        out[times == 0.0] = np.asarray(x, dtype=float)
        return out

    def eval(self, t, x):
        self._check_time(t)
        return self.states(x, [t])[0]

    def jacobian_x(self, t, x):
        self._check_time(t)
        x = np.asarray(x, dtype=float)
        y = self.S.inverse(x)
        if t == 0.0:
            return np.eye(3)
        Y = _integrate(self.g, y, [t], self.rtol, self.atol, with_jacobian=True)[0]
        P = Y[3:].reshape(3, 3)
        return self.S.jacobian(Y[:3]) @ P @ np.linalg.inv(self.S.jacobian(y))

    def describe(self) -> dict:
        return {"kind": "flattened", **self.params.as_dict(), "frame": self.frame.describe(),
                "graph": self.S.graph.to_dict()}


def conjugate_flow(vf: VectorField, frame: EigenFrame, S: Straightener) -> FlattenedFlow:
    return FlattenedFlow(vf, frame, S)


def flatten_field(vf: VectorField, r: float, degree: int = 3, r_hat: float | None = None, lam: float = 0.1):
    """Whole pipeline; returns ``(frame, graph, straightener, flow)``."""
    frame = eigenframe(vf)
    local = fit_local_manifolds(vf, frame, r, degree)
    graph = extend_graph(local, 0.5 * r if r_hat is None else r_hat, lam) if not local.is_zero else local
    S = Straightener(graph)
    return frame, graph, S, FlattenedFlow(vf, frame, S)


# ---------------------------------------------------------------------------
# checks of the flat structure


@dataclass
class PropertyCheck:
    name: str
    status: str  # "pass", "fail" or "not checked"
    residual: float = math.nan
    detail: str = ""


@dataclass
class FlatReport:
    checks: dict
    certified_radius: float

    @property
    def all_pass(self) -> bool:
        return all(c.status != "fail" for c in self.checks.values())

    def rows(self) -> list[dict]:
        return [{"property": k, "status": c.status, "residual": c.residual, "detail": c.detail}
                for k, c in self.checks.items()]


def _invariance_residual(flow: FlowModel, radius: float, rng, n: int, times) -> tuple[float, float]:
    worst_l = worst_u = 0.0
    for _ in range(n):
        th = rng.uniform(0, 2 * math.pi)
        rad = radius * math.sqrt(rng.uniform(0.0, 1.0))
        x = np.array([rad * math.cos(th), rad * math.sin(th), 0.0])
        st = flow.states(x, times)
        worst_l = max(worst_l, float(np.max(np.abs(st[:, 2]))))
        y = np.array([0.0, 0.0, rng.uniform(-radius, radius)])
        st = flow.states(y, -times)
        worst_u = max(worst_u, float(np.max(np.hypot(st[:, 0], st[:, 1]))))
    return worst_l, worst_u


def verify_flat_structure(flow: FlowModel, h_seed=None, radius: float = 0.05, n_samples: int = 12,
                          tol: float = 1e-8, seed: int = 0) -> FlatReport:
    """Numerical checks of the flat local structure of ``flow``.

    F1: the origin is fixed.  F3: ``D2F(t, 0)`` has the block structure of
    ``e^{tA}``.  F4: the stable plane is invariant in forward time and the
    unstable axis in backward time for starts in a ball; the largest radius
    (halving from ``radius``) where this holds to ``tol`` is reported.
    F2/F5 need a homoclinic seed ``(h, t_U, t_L)``: ``h`` must avoid the
    origin, lie on the unstable axis up to ``t_U`` and in the stable plane
    from ``t_L`` on.
    """
    rng = np.random.default_rng(seed)
    checks = {}
    ts = np.linspace(-1.0, 1.0, 9)
    f1 = max(float(np.linalg.norm(flow.eval(t, np.zeros(3)))) for t in ts)
    checks["F1"] = PropertyCheck("F1", "pass" if f1 < 1e-12 else "fail", f1, "|F(t,0)| over t in [-1,1]")

    off, exp_res = 0.0, 0.0
    for t in np.linspace(0.0, 1.0, 6):
        J = flow.jacobian_x(t, np.zeros(3))
        off = max(off, float(np.max(np.abs(J[:2, 2]))), float(np.max(np.abs(J[2, :2]))))
        exp_res = max(exp_res, float(np.max(np.abs(J - linear_flow_matrix(flow.params, t)))))
    checks["F3"] = PropertyCheck("F3", "pass" if off < 1e-8 and exp_res < 1e-7 else "fail", max(off, exp_res),
                                 f"off-block {off:.3g}, distance to exp(tA) {exp_res:.3g}")

    times = np.linspace(0.125, 1.0, 8)
    r = radius
    worst = math.inf
    for _ in range(12):
        wl, wu = _invariance_residual(flow, r, rng, n_samples, times)
        worst = max(wl, wu)
        if worst < tol:
            break
        r *= 0.5
    ok4 = worst < tol
    checks["F4"] = PropertyCheck("F4", "pass" if ok4 else "fail", worst,
                                 f"plane/axis invariance within radius {r:.3g}")
    r_F = r if ok4 else 0.0

    if h_seed is None:
        checks["F2"] = PropertyCheck("F2", "not checked", detail="no homoclinic seed")
        checks["F5"] = PropertyCheck("F5", "not checked", detail="no homoclinic seed")
    else:
        h, t_U, t_L = (h_seed.h, h_seed.t_U, h_seed.t_L) if hasattr(h_seed, "t_U") else h_seed
        span = np.linspace(t_U - 5.0, t_L + 5.0, 401)
        pts = np.array([h(t) for t in span])
        nz = float(np.min(np.linalg.norm(pts, axis=1)))
        checks["F2"] = PropertyCheck("F2", "pass" if nz > 0 else "fail", nz, "min |h(t)| on the sampled range")
        back = np.array([h(t) for t in np.linspace(t_U - 5.0, t_U, 41)])
        fwd = np.array([h(t) for t in np.linspace(t_L, t_L + 5.0, 41)])
        res_u = float(np.max(np.hypot(back[:, 0], back[:, 1])))
        res_l = float(np.max(np.abs(fwd[:, 2])))
        signs = np.sign(back[:, 2])
        case = "upper" if np.all(signs > 0) else ("lower" if np.all(signs < 0) else "mixed")
        ok5 = max(res_u, res_l) < tol and case != "mixed"
        checks["F5"] = PropertyCheck("F5", "pass" if ok5 else "fail", max(res_u, res_l),
                                     f"unstable branch: {case}")
    return FlatReport(checks, r_F)


verify_F1_F5 = verify_flat_structure


def stitched_seed(flow: FlowModel, axis_height: float, plane_point, t_gap: float = 1.0):
    """Flowline-shaped seed for the F2/F5 checks when the field has no homoclinic orbit.

    For ``t <= 0`` it is the flowline through ``(0, 0, axis_height)``, for
    ``t >= t_gap`` the flowline through ``plane_point`` (shifted to start at
    ``t_gap``), joined linearly in between.  Both pieces are genuine
    flowlines, so F5 tests the invariance of the axis and the plane along them.
    """
    from .homoclinic import HomoclinicData

    up0 = np.array([0.0, 0.0, float(axis_height)])
    down0 = np.asarray(plane_point, dtype=float)

    def h(t):
        if t <= 0.0:
            return flow.eval(t, up0)
        if t >= t_gap:
            return flow.eval(t - t_gap, down0)
        w = t / t_gap
        return (1 - w) * up0 + w * down0

    return HomoclinicData(h, 0.0, float(t_gap))
