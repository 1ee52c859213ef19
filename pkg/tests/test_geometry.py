from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from shilnikov.errors import PreconditionViolated
from shilnikov.geometry import (
    StabilityParams,
    box_constants,
    in_unit_box,
    linear_flow,
    linear_flow_many,
    linear_flow_matrix,
    linear_flow_norm,
    project_stable,
    project_unstable,
    stable_norm,
    wrap_angle,
)


@pytest.mark.parametrize("sigma,mu,u", [(0.5, 1.0, 1.0), (-1.0, -1.0, 1.0), (-1.0, 1.0, 0.0), (-2.0, 1.0, 1.5)])
def test_params_reject_bad_spectrum(sigma, mu, u):
    with pytest.raises(PreconditionViolated):
        StabilityParams(sigma, mu, u)


def test_matrix_flow_matches_mpmath(ref_params, rng):
    p = ref_params
    for _ in range(20):
        t = float(rng.uniform(-2, 3))
        x = rng.standard_normal(3)
        ref = oracles.linear_state(p.sigma, p.mu, p.u, t, x)
        assert np.allclose(linear_flow(p, t, x), ref, rtol=1e-13, atol=1e-14)
        assert np.allclose(linear_flow_matrix(p, t), oracles.linear_matrix(p.sigma, p.mu, p.u, t), rtol=1e-13,
                           atol=1e-15)


def test_group_property_and_batch(ref_params):
    p = ref_params
    x = np.array([0.3, -0.2, 0.1])
    a = linear_flow(p, 0.7, linear_flow(p, 0.4, x))
    assert np.allclose(a, linear_flow(p, 1.1, x), rtol=1e-14)
    many = linear_flow_many(p, [0.0, 0.5, 1.0], x)
    assert np.allclose(many[0], x)
    assert np.allclose(many[2], linear_flow(p, 1.0, x))


def test_flow_turns_clockwise(ref_params):
    p = ref_params
    y = linear_flow(p, 0.1, [1.0, 0.0, 0.0])
    assert math.atan2(y[1], y[0]) == pytest.approx(-p.mu * 0.1)


def test_projections_and_norms():
    x = np.array([3.0, 4.0, 5.0])
    assert np.allclose(project_stable(x) + project_unstable(x), x)
    assert stable_norm(x) == 5.0
    assert in_unit_box([0.6, 0.8, -1.0]) and not in_unit_box([0.6, 0.81, 0.0])


def test_box_constants(ref_params):
    bc = box_constants(ref_params)
    assert bc.max_linear_norm == pytest.approx(math.exp(1.5))
    assert bc.outer_radius == pytest.approx(2 * (2 * math.exp(1.5) + 2))
    assert linear_flow_norm(ref_params, 1.0) == pytest.approx(np.linalg.norm(linear_flow_matrix(ref_params, 1.0), 2))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_wrap_angle_range_and_congruence(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    k = (a - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-6
