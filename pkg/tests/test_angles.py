from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from shilnikov.angles import (
    angle_correction,
    angle_lift,
    check_lift_envelopes,
    correction_bound,
    exit_angle,
    rate_excess,
)
from shilnikov.errors import DomainExit, PreconditionViolated
from shilnikov.flow import LinearFlow, ModelFieldFlow, ScaledFlow


@pytest.fixture(scope="module")
def zoomed(ref_params):
    return ScaledFlow(ModelFieldFlow(ref_params, 1.0, 1.0), 0.05)


def test_correction_zero_for_linear_flow(ref_params):
    f = LinearFlow(ref_params)
    c = angle_correction(f, 0.01, [0.6, 0.0, 0.3], 0.0, 0.7)
    assert abs(c.delta) < 1e-15
    assert c.bound == pytest.approx(math.asin(0.01 / (math.exp(-1) - 0.01)))


def test_correction_matches_quadrature(zoomed, ref_params):
    p = ref_params
    x = np.array([0.5 * math.cos(0.4), 0.5 * math.sin(0.4), 0.8])
    c = angle_correction(zoomed, 0.01, x, 0.4, 1.0)
    # zoomed field: coupling eps^2, cutoff radius 1/eps
    ref = oracles.model_field_angle_increment(p.sigma, p.mu, p.u, 0.05**2, 1 / 0.05, x, 1.0) + p.mu
    assert c.delta == pytest.approx(ref, abs=1e-10)
    assert 0 < c.delta <= c.bound


def test_correction_preconditions(ref_params):
    f = LinearFlow(ref_params)
    with pytest.raises(PreconditionViolated):
        angle_correction(f, 0.5, [0.6, 0.0, 0.3], 0.0, 0.5)
    with pytest.raises(PreconditionViolated):
        angle_correction(f, 0.01, [0.6, 0.0, 0.3], 1.0, 0.5)
    with pytest.raises(PreconditionViolated):
        angle_correction(f, 0.01, [0.0, 0.0, 0.3], 0.0, 0.5)


def test_rate_excess_matches_mpmath():
    for eta in (1e-4, 0.01, 0.1):
        assert rate_excess(eta, -1.0) == pytest.approx(oracles.rate_excess(eta, -1.0), rel=1e-13)
    assert rate_excess(0.01, -1.0) == pytest.approx(correction_bound(0.01, -1.0))


def test_lift_linear_is_affine(ref_params):
    lift = angle_lift(LinearFlow(ref_params), 0.3, 1e-6, 7.5)
    assert np.allclose(lift.phi, 0.3 - ref_params.mu * lift.times, atol=1e-12)
    assert lift.max_mismatch < 1e-12
    assert len(lift.integer_phi) == 9


def test_lift_model_field_against_quadrature(zoomed, ref_params):
    p = ref_params
    psi, delta = -1.1, 1e-6
    lift = angle_lift(zoomed, psi, delta, 8.0)
    x0 = np.array([math.cos(psi), math.sin(psi), delta])
    for t in (1.0, 4.0, 8.0):
        ref = psi + oracles.model_field_angle_increment(p.sigma, p.mu, p.u, 0.05**2, 20.0, x0, t)
        assert lift.at(t) == pytest.approx(ref, abs=1e-9)
    rep = check_lift_envelopes(lift, p, 0.01, 0.1)
    assert rep.all_hold


def test_lift_leaves_box(ref_params):
    with pytest.raises(DomainExit):
        angle_lift(LinearFlow(ref_params), 0.0, 0.1, 5.0)


def test_lift_csv(tmp_path, ref_params):
    lift = angle_lift(LinearFlow(ref_params), 0.0, 1e-3, 2.0)
    path = tmp_path / "lift.csv"
    lift.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,phi,stable_radius,unstable_abs" and len(lines) == len(lift.times) + 1


def test_exit_angle_closed_form(ref_params, rng):
    f = LinearFlow(ref_params)
    for _ in range(20):
        psi = float(rng.uniform(-3, 3))
        d = float(10 ** rng.uniform(-12, -1))
        ref = oracles.linear_exit_angle(0.5, psi, d, ref_params.mu, ref_params.u)
        assert exit_angle(f, 0.5, psi, d) == pytest.approx(ref, abs=1e-11)
