"""One boundary-crossing perturbation per ledger inequality.

Each perturbation starts from a feasible ledger, pins every quantity
through ``options()`` and moves one input just past the boundary of its
relation.  Two relations cannot break alone: the level separation has no
solution once the spiral exponent reaches 1, and the inner-height relation
divides by the rate gap that ``m_below_eta_tilde`` makes non-positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from scipy.optimize import brentq

from shilnikov.chaos import (
    build_ledger,
    eta_for_rate,
    level_separation_bound,
    spiral_product,
    LedgerOptions,
)
from shilnikov.config import build_system, ledger_options
from shilnikov.flow import LinearFlow
from shilnikov.geometry import StabilityParams

FORCED_COMPANIONS = {
    "spiral_exponent": {"level_separation"},
    "m_below_eta_tilde": {"inner_height"},
}


@dataclass
class Baseline:
    flow: object
    plane: object
    exterior: object
    omega: float
    scale: float
    ledger: object

    def build(self, options, flow=None):
        return build_ledger(flow or self.flow, self.plane, self.exterior, self.omega, options, self.scale)


def baseline(cfg) -> Baseline:
    flow, plane, ext, omega, scale = build_system(cfg)
    led = build_ledger(flow, plane, ext, omega, ledger_options(cfg), scale)
    return Baseline(flow, plane, ext, omega, scale, led)


def failed(ledger) -> set:
    return {k for k, v in ledger.flags.items() if not v}


def perturb(name: str, base: Baseline, nonlinear: Baseline | None = None):
    """Ledger with the relation ``name`` pushed just past its boundary."""
    L0 = base.ledger
    o = L0.options()
    p = L0.params
    if name == "eta_tilde_bound":
        # needs mu or -sigma/2 small enough that the other relations survive the larger margin
        alt = LinearFlow(StabilityParams(-0.2, 10.0, 3.0))
        La = base.build(LedgerOptions(rate_margin=0.09), flow=alt)
        return base.build(replace(La.options(), rate_margin=0.1 * 1.01), flow=alt)
    if name == "spiral_exponent":
        e_star = brentq(lambda e: spiral_product(p, e) - 1.0, 1e-3, min(p.mu, -p.sigma / 2) - 1e-9)
        return base.build(replace(o, rate_margin=e_star * 1.001))
    if name == "eta_smallness":
        if nonlinear is None:
            raise ValueError("the bound below the measured linearization error needs a nonlinear flow")
        Ln = nonlinear.ledger
        return nonlinear.build(replace(Ln.options(), jacobian_bound=0.9 * Ln.jacobian_measured))
    if name == "m_below_eta_tilde":
        return base.build(replace(o, jacobian_bound=eta_for_rate(p.sigma, o.rate_margin * 1.01)))
    if name == "scale_small":
        return base.build(replace(o, scale_limit=0.5 * L0.scale))
    if name == "inner_radius":
        return base.build(replace(o, height_escape=1.01))
    if name == "inner_height":
        return base.build(replace(o, height_max=L0.height_escape * 1.01))
    if name == "square_certified":
        return base.build(replace(o, beta=0.001))
    if name == "alpha_below_delta_j":
        return base.build(replace(o, square_half_width=L0.height_max * 1.01))
    if name == "delta_beta_bound":
        return base.build(replace(o, height_contained=L0.height_contained * 1.01))
    if name == "delta2_below_delta_beta":
        return base.build(replace(o, height_contained=L0.level_high * 0.99))
    if name == "level_separation":
        bound = level_separation_bound(p, o.rate_margin, base.plane.kappa_inv_norm)
        return base.build(replace(o, level_high=bound * 1.01))
    if name == "angle_gap":
        # lower the upper level until the gap is 1e-3 short of 4 pi
        target = L0.angle_max_low + 4.0 * math.pi - 1e-3
        d2 = math.exp(math.log(L0.level_high) + p.u / p.mu * (target - L0.angle_min_high))
        return base.build(replace(o, level_high=d2))
    if name == "psi_j_window":
        return base.build(replace(o, split_angle=L0.split_angle + 6.0 * math.pi))
    if name == "split_direction":
        return base.build(replace(o, split_angle=L0.split_angle + 1e-3))
    raise KeyError(name)
