"""Flows near the equilibrium and numerical checks of their linearization estimates.

Three concrete flows share the ``FlowModel`` interface:

* ``LinearFlow``: the exact linear flow ``T(t)``.
* ``ModelFieldFlow``: ``A x + c x3^2 chi(|x|) (-x2, x1, 0)``, integrated by
  the Dormand-Prince kernels.  The stable plane and the unstable axis are
  invariant for every coupling, so the flow has the local product structure
  the return-map machinery needs while being genuinely nonlinear.
* ``ScaledFlow``: the zoomed flow ``F(t, eps x) / eps`` of any base flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    HypothesisFailed,
    IntegrationBudgetExceeded,
    NoEscape,
    PreconditionViolated,
)
from .geometry import (
    StabilityParams,
    box_constants,
    in_unit_box,
    linear_flow,
    linear_flow_many,
    linear_flow_matrix,
    stable_norm,
)


@dataclass
class LevelHit:
    """First time the unstable coordinate reaches a level, with unit-time samples."""

    tau: float
    endpoint: np.ndarray
    integer_states: np.ndarray  # states at t = 0, 1, ..., n

    @property
    def n(self) -> int:
        return len(self.integer_states) - 1


class FlowModel:
    """Interface for flows ``F(t, x)`` with spatial derivative ``D2F(t, x)``."""

    params: StabilityParams
    t_max: float = 1000.0

    def eval(self, t: float, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian_x(self, t: float, x) -> np.ndarray:
        raise NotImplementedError

    def field(self, x) -> np.ndarray | None:
        """Time derivative at t=0, or None when no vector field is at hand."""
        return None

    def time_derivative(self, x, h: float = 1e-6) -> np.ndarray:
        f = self.field(x)
        if f is not None:
            return f
        return (self.eval(h, x) - self.eval(-h, x)) / (2.0 * h)

    def states(self, x, times) -> np.ndarray:
        """States at a monotone sequence of times starting from x at t=0."""
        return np.array([self.eval(t, x) for t in times])

    def states_and_jacobians(self, x, times):
        st = self.states(x, times)
        jac = np.array([self.jacobian_x(t, x) for t in times])
        return st, jac

    def _check_time(self, t: float):
        if abs(t) > self.t_max:
            raise IntegrationBudgetExceeded(f"|t|={abs(t)} exceeds the time budget {self.t_max}")

    def level_hit(self, x, level: float = 1.0, t_max: float | None = None) -> LevelHit:
        """First crossing of ``x3 = level``: unit-step march, then bisection in time."""
        t_max = self.t_max if t_max is None else t_max
        y = np.asarray(x, dtype=float)
        ints = [y.copy()]
        k = 0
        while k < t_max:
            subs = [self.eval(s, y) for s in np.linspace(0.125, 1.0, 8)]
            hit = next((i for i, z in enumerate(subs) if z[2] >= level), None)
            if hit is not None:
                lo = 0.125 * hit
                hi = 0.125 * (hit + 1)
                while hi - lo > 1e-12:
                    mid = 0.5 * (lo + hi)
                    if self.eval(mid, y)[2] >= level:
                        hi = mid
                    else:
                        lo = mid
                s = 0.5 * (lo + hi)
                return LevelHit(k + s, self.eval(s, y), np.array(ints))
            y = subs[-1]
            if y[2] <= 0.0:
                break
            k += 1
            ints.append(y.copy())
        raise NoEscape(f"unstable coordinate did not reach {level} within t={t_max}")


class LinearFlow(FlowModel):
    """Closed-form linear flow; its scaled versions are itself."""

    def __init__(self, params: StabilityParams):
        self.params = params

    def eval(self, t, x):
        return linear_flow(self.params, t, x)

    def jacobian_x(self, t, x):
        return linear_flow_matrix(self.params, t)

    def field(self, x):
        return self.params.matrix @ np.asarray(x, dtype=float)

    def states(self, x, times):
        return linear_flow_many(self.params, times, x)

    def scaled(self, eps: float) -> "LinearFlow":
        return self

    def level_hit(self, x, level=1.0, t_max=None):
        x = np.asarray(x, dtype=float)
        if not x[2] > 0.0:
            raise NoEscape("unstable coordinate must be positive to escape")
        tau = math.log(level / x[2]) / self.params.u
        if tau < 0:
            raise PreconditionViolated("start point already above the level")
        n = max(math.ceil(tau) - 1, 0)
        ints = linear_flow_many(self.params, np.arange(n + 1), x)
        end = linear_flow(self.params, tau, x)
        end[2] = level
        return LevelHit(tau, end, ints)

    def describe(self) -> dict:
        return {"kind": "linear", **self.params.as_dict()}


class ModelFieldFlow(FlowModel):
    """Flow of ``A x + coupling * x3^2 * chi(|x|) * (-x2, x1, 0)``."""

    def __init__(
        self,
        params: StabilityParams,
        coupling: float = 0.0,
        cutoff_radius: float = 1.0,
        rtol: float = 1e-12,
        atol: float = 1e-300,
        max_steps: int = 2_000_000,
        t_max: float = 1000.0,
        backend: str | None = None,
    ):
        if coupling < 0:
            raise PreconditionViolated("coupling must be non-negative")
        if not cutoff_radius > 0:
            raise PreconditionViolated("cutoff radius must be positive")
        self.params = params
        self.coupling = float(coupling)
        self.cutoff_radius = float(cutoff_radius)
        self.rtol = rtol
        self.atol = atol
        self.max_steps = max_steps
        self.t_max = t_max
        self.backend_name = backend
        self._k = kernels.get_backend(backend)
        self._p = (params.sigma, params.mu, params.u, self.coupling, self.cutoff_radius)

    def scaled(self, eps: float) -> "ModelFieldFlow":
        """Equivalent field for ``F(t, eps x) / eps``: coupling eps^2, radius / eps."""
        return ModelFieldFlow(
            self.params,
            self.coupling * eps * eps,
            self.cutoff_radius / eps,
            self.rtol,
            self.atol,
            self.max_steps,
            self.t_max,
            self.backend_name,
        )

    def field(self, x):
        from ._kernels_py import make_rhs

        return make_rhs(self._p, False)(np.asarray(x, dtype=float))

    def field_jacobian(self, x):
        from ._kernels_py import make_rhs

        y = np.zeros(12)
        y[:3] = x
        y[3:] = np.eye(3).reshape(9)
        return make_rhs(self._p, True)(y)[3:].reshape(3, 3)

    def _run(self, x, times, var):
        times = np.asarray(times, dtype=float).reshape(-1)
        if times.size and np.max(np.abs(times)) > self.t_max:
            raise IntegrationBudgetExceeded(f"time {np.max(np.abs(times))} exceeds budget {self.t_max}")
        status, out, _ = self._k.flow(
            self._p, np.asarray(x, dtype=float), times, self.rtol, self.atol, self.max_steps, var
        )
        if status != 0:
            raise IntegrationBudgetExceeded(f"step budget {self.max_steps} exhausted")
        return out

    def eval(self, t, x):
        return self._run(x, [t], False)[0]

    def states(self, x, times):
        return self._run(x, times, False)

    def jacobian_x(self, t, x):
        return self._run(x, [t], True)[0, 3:].reshape(3, 3)

    def states_and_jacobians(self, x, times):
        out = self._run(x, times, True)
        return out[:, :3], out[:, 3:].reshape(-1, 3, 3)

    def level_hit(self, x, level=1.0, t_max=None):
        x = np.asarray(x, dtype=float)
        if not x[2] > 0.0:
            raise NoEscape("unstable coordinate must be positive to escape")
        if x[2] >= level:
            raise PreconditionViolated("start point already at or above the level")
        t_max = self.t_max if t_max is None else t_max
        status, tau, end, ints, _ = self._k.level_hit(
            self._p, x, level, t_max, self.rtol, self.atol, self.max_steps
        )
        if status == 1:
            raise IntegrationBudgetExceeded(f"step budget {self.max_steps} exhausted")
        if status in (2, 3):
            raise NoEscape(f"no escape through x3={level} within t={t_max} (status {status})")
        return LevelHit(float(tau), np.asarray(end, dtype=float), np.asarray(ints, dtype=float))

    def describe(self) -> dict:
        return {
            "kind": "model-field",
            **self.params.as_dict(),
            "coupling": self.coupling,
            "cutoff_radius": self.cutoff_radius,
            "rtol": self.rtol,
        }


class ScaledFlow(FlowModel):
    """The zoomed flow ``F_eps(t, x) = F(t, eps x) / eps``.

    When the base flow knows an exactly equivalent rescaled field (``scaled``)
    that is used, which keeps the integrator's relative error control in the
    zoomed coordinates.  Otherwise the definition is applied literally.
    """

    def __init__(self, base: FlowModel, epsilon: float):
        if not epsilon > 0:
            raise PreconditionViolated("epsilon must be positive")
        self.base = base
        self.epsilon = float(epsilon)
        self.params = base.params
        self.t_max = base.t_max
        self._impl = base.scaled(self.epsilon) if hasattr(base, "scaled") else None

    @property
    def is_linear(self) -> bool:
        return isinstance(self.base, LinearFlow)

    def eval(self, t, x):
        if self._impl is not None:
            return self._impl.eval(t, x)
        return self.base.eval(t, self.epsilon * np.asarray(x, dtype=float)) / self.epsilon

    def eval_literal(self, t, x):
        """Evaluate through the base flow, bypassing the equivalent-field shortcut."""
        return self.base.eval(t, self.epsilon * np.asarray(x, dtype=float)) / self.epsilon

    def jacobian_x(self, t, x):
        if self._impl is not None:
            return self._impl.jacobian_x(t, x)
        return self.base.jacobian_x(t, self.epsilon * np.asarray(x, dtype=float))

    def field(self, x):
        if self._impl is not None:
            return self._impl.field(x)
        f = self.base.field(self.epsilon * np.asarray(x, dtype=float))
        return None if f is None else f / self.epsilon

    def states(self, x, times):
        if self._impl is not None:
            return self._impl.states(x, times)
        return np.array([self.eval(t, x) for t in times])

    def states_and_jacobians(self, x, times):
        if self._impl is not None:
            return self._impl.states_and_jacobians(x, times)
        return super().states_and_jacobians(x, times)

    def level_hit(self, x, level=1.0, t_max=None):
        if self._impl is not None:
            return self._impl.level_hit(x, level, t_max)
        return super().level_hit(x, level, t_max)

    def describe(self) -> dict:
        d = self.base.describe() if hasattr(self.base, "describe") else {"kind": type(self.base).__name__}
        return {**d, "epsilon": self.epsilon}


# ---------------------------------------------------------------------------
# sampling grids


def unit_box_grid(n: int) -> np.ndarray:
    """``n^3`` points covering the unit box; stable parts outside the disk are pulled to its rim."""
    g = np.linspace(-1.0, 1.0, n)
    X = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    r = np.hypot(X[:, 0], X[:, 1])
    far = r > 1.0
    X[far, :2] /= r[far, None]
    return X


def random_unit_box(rng: np.random.Generator, size: int) -> np.ndarray:
    r = np.sqrt(rng.uniform(0, 1, size))
    th = rng.uniform(-np.pi, np.pi, size)
    z = rng.uniform(-1, 1, size)
    return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)


# ---------------------------------------------------------------------------
# linearization error and the two scale thresholds


def linearization_error(model: FlowModel, n_space: int = 9, n_time: int = 11) -> float:
    """Sampled ``sup |D2F(t,x) - T(t)|`` over ``[0,1] x`` unit box (spectral norm)."""
    if isinstance(model, LinearFlow) or (isinstance(model, ScaledFlow) and model.is_linear):
        return 0.0
    times = np.linspace(0.0, 1.0, n_time)
    Ts = np.array([linear_flow_matrix(model.params, t) for t in times])
    worst = 0.0
    for x in unit_box_grid(n_space):
        _, jac = model.states_and_jacobians(x, times)
        worst = max(worst, float(np.max(np.linalg.norm(jac - Ts, ord=2, axis=(1, 2)))))
    return worst


@dataclass
class LinearizationReport:
    coarse: float
    refined: float

    @property
    def relative_change(self) -> float:
        if self.refined == 0.0:
            return 0.0
        return abs(self.refined - self.coarse) / self.refined


def linearization_report(model: FlowModel) -> LinearizationReport:
    """Coarse (9^3 x 11) and refined (17^3 x 21) linearization-error estimates."""
    return LinearizationReport(linearization_error(model, 9, 11), linearization_error(model, 17, 21))


def _bisect_scale(ok, eps_lo: float, eps_hi: float, rel_tol: float, eps_cap: float):
    """Largest eps with ``ok(eps)``, given ok is true below a threshold."""
    if not ok(eps_lo):
        while eps_lo > 1e-12:
            eps_lo /= 4.0
            if ok(eps_lo):
                break
        else:
            return 0.0
    hi = max(eps_hi, eps_lo * 2.0)
    while ok(hi):
        eps_lo = hi
        hi *= 4.0
        if hi > eps_cap:
            return math.inf
    lo = eps_lo
    while hi - lo > rel_tol * lo:
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def scale_for_linearization_error(
    base: FlowModel, eta: float, n_space: int = 9, n_time: int = 11, rel_tol: float = 1e-3,
    eps_cap: float = 1e6,
) -> float:
    """Largest sampled ``eps`` with linearization error below ``eta`` (inf for the linear flow)."""
    if isinstance(base, LinearFlow):
        return math.inf
    return _bisect_scale(
        lambda e: linearization_error(ScaledFlow(base, e), n_space, n_time) < eta,
        1e-3, 1.0, rel_tol, eps_cap,
    )


def maps_unit_box_into_ball(model: FlowModel, n_space: int = 9, n_time: int = 11) -> bool:
    """Sampled check that unit-time images of the unit box stay in the outer ball,
    and that the stable plane and unstable axis are invariant there."""
    rB = box_constants(model.params).outer_radius
    times = np.linspace(0.0, 1.0, n_time)
    for x in unit_box_grid(n_space):
        st = model.states(x, times)
        if np.max(np.linalg.norm(st, axis=1)) > rB:
            return False
        if x[2] == 0.0 and np.max(np.abs(st[:, 2])) > 1e-12:
            return False
        if x[0] == 0.0 and x[1] == 0.0 and np.max(stable_norm(st)) > 1e-12:
            return False
    return True


def scale_for_box(base: FlowModel, n_space: int = 9, n_time: int = 11, rel_tol: float = 1e-3,
                  eps_cap: float = 1e6) -> float:
    """Largest sampled ``eps`` for which the zoomed flow maps the unit box into the outer ball."""
    if isinstance(base, LinearFlow):
        return math.inf
    return _bisect_scale(
        lambda e: maps_unit_box_into_ball(ScaledFlow(base, e), n_space, n_time),
        1e-3, 1.0, rel_tol, eps_cap,
    )


# ---------------------------------------------------------------------------
# bound checks


@dataclass
class BoundReport:
    """Named inequalities with their slack (positive means satisfied)."""

    slacks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add(self, name: str, lhs: float, rhs: float, tol: float = 0.0):
        s = rhs - lhs + tol
        self.slacks[name] = min(self.slacks.get(name, math.inf), s)

    @property
    def holds(self) -> dict:
        return {k: v >= 0.0 for k, v in self.slacks.items()}

    @property
    def all_hold(self) -> bool:
        return all(v >= 0.0 for v in self.slacks.values())

    @property
    def violations(self) -> list:
        return [k for k, v in self.slacks.items() if v < 0.0]


def _tol(scale: float) -> float:
    return 1e-11 * max(scale, 1e-300)


def check_unit_time_bounds(model: FlowModel, eta: float, x, t: float) -> BoundReport:
    """Component-wise closeness of ``F(t,x)`` to ``T(t)x`` over one time unit."""
    x = np.asarray(x, dtype=float)
    if not in_unit_box(x):
        raise PreconditionViolated("x must lie in the unit box")
    if not 0.0 <= t <= 1.0:
        raise PreconditionViolated("t must lie in [0, 1]")
    p = model.params
    y = model.eval(t, x)
    xl, xu = stable_norm(x), abs(x[2])
    lin = linear_flow(p, t, x)
    rep = BoundReport()
    tol = _tol(np.linalg.norm(x))
    rep.add("unstable_deviation", abs(y[2] - lin[2]), eta * xu, tol)
    rep.add("stable_deviation", math.hypot(y[0] - lin[0], y[1] - lin[1]), eta * xl, tol)
    yu, yl = abs(y[2]), stable_norm(y)
    rep.add("unstable_norm_low", (math.exp(p.u * t) - eta) * xu, yu, tol)
    rep.add("unstable_norm_high", yu, (math.exp(p.u * t) + eta) * xu, tol)
    rep.add("stable_norm_low", (math.exp(p.sigma * t) - eta) * xl, yl, tol)
    rep.add("stable_norm_high", yl, (math.exp(p.sigma * t) + eta) * xl, tol)
    return rep


def _unit_box_iterates(model: FlowModel, x, n: int, t_samples):
    """Integer-time states 0..n+1 and states at n + t for the sampled t."""
    times = sorted(set([float(k) for k in range(n + 2)] + [n + float(t) for t in t_samples]))
    st = model.states(x, times)
    return {t: s for t, s in zip(times, st)}


def check_iterated_bounds(model: FlowModel, eta: float, x, n: int, t_samples=(0.0, 0.25, 0.5, 0.75, 1.0)) -> BoundReport:
    """Growth/decay products over ``n`` unit steps while the flowline stays in the unit box.

    Raises ``HypothesisFailed`` with ``step=j`` if ``|x3(j+1)| > 1`` for some
    ``j < n``.
    """
    p = model.params
    if not (0.0 <= eta < math.exp(p.sigma) and math.exp(p.sigma) + eta < 1.0):
        raise PreconditionViolated("need 0 <= eta < e^sigma and e^sigma + eta < 1")
    x = np.asarray(x, dtype=float)
    if not in_unit_box(x):
        raise PreconditionViolated("x must lie in the unit box")
    if n < 0:
        raise PreconditionViolated("n must be non-negative")
    st = _unit_box_iterates(model, x, n, t_samples)
    for j in range(n):
        if abs(st[float(j + 1)][2]) > 1.0:
            raise HypothesisFailed(f"|x3| exceeds 1 at step {j + 1}", step=j)
    rep = BoundReport()
    for j in range(n + 1):
        rep.add("stays_in_unit_box", 0.0 if in_unit_box(st[float(j)], 1e-12) else 1.0, 0.0)
    xl, xu = stable_norm(x), abs(x[2])
    a = eta * math.exp(-p.sigma)
    for t in t_samples:
        y = st[n + float(t)]
        tol = _tol(np.linalg.norm(y))
        e_s = math.exp(p.sigma * (t + n))
        e_u = math.exp(p.u * (t + n))
        rep.add("stable_low", e_s * (1 - a) ** (n + 1) * xl, stable_norm(y), tol)
        rep.add("stable_high", stable_norm(y), e_s * (1 + a) ** (n + 1) * xl, tol)
        rep.add("unstable_low", e_u * (1 - eta) ** (n + 1) * xu, abs(y[2]), tol)
        rep.add("unstable_high", abs(y[2]), e_u * (1 + eta) ** (n + 1) * xu, tol)
    return rep


def exponential_conditions(p: StabilityParams, eta_tilde: float, eta: float, n: int) -> dict:
    """Slacks of the logarithmic smallness conditions behind the exponential rates."""
    a = eta * math.exp(-p.sigma)
    up = math.log1p(a)
    lo = -math.log1p(-a) if a < 1 else math.inf
    k = (n + 1) / n
    return {
        "log_growth": eta_tilde - up,
        "log_decay": eta_tilde - lo,
        "log_growth_steps": eta_tilde - k * up,
        "log_decay_steps": eta_tilde - k * lo,
    }


def check_exponential_bounds(
    model: FlowModel, eta_tilde: float, eta: float, n: int, x, t_samples=(0.0, 0.25, 0.5, 0.75, 1.0)
) -> BoundReport:
    """Rates ``sigma +- eta_tilde`` and ``u +- eta_tilde`` after ``n`` unit steps."""
    p = model.params
    if n < 1:
        raise PreconditionViolated("n must be a positive integer")
    conds = exponential_conditions(p, eta_tilde, eta, n)
    bad = [k for k, v in conds.items() if not v > 0.0]
    if bad:
        raise HypothesisFailed("smallness conditions fail: " + ", ".join(bad), conditions=bad)
    x = np.asarray(x, dtype=float)
    it = check_iterated_bounds(model, eta, x, n, t_samples)
    st = _unit_box_iterates(model, x, n, t_samples)
    rep = BoundReport(extra={"iterated": it.slacks})
    xl, xu = stable_norm(x), abs(x[2])
    for t in t_samples:
        y = st[n + float(t)]
        tol = _tol(np.linalg.norm(y))
        s = t + n
        rep.add("stable_rate_low", math.exp((p.sigma - eta_tilde) * s) * xl, stable_norm(y), tol)
        rep.add("stable_rate_high", stable_norm(y), math.exp((p.sigma + eta_tilde) * s) * xl, tol)
        rep.add("unstable_rate_low", math.exp((p.u - eta_tilde) * s) * xu, abs(y[2]), tol)
        rep.add("unstable_rate_high", abs(y[2]), math.exp((p.u + eta_tilde) * s) * xu, tol)
    return rep
