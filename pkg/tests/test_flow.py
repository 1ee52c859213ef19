from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from shilnikov import kernels
from shilnikov.errors import HypothesisFailed, IntegrationBudgetExceeded, NoEscape, PreconditionViolated
from shilnikov.flow import (
    LinearFlow,
    ModelFieldFlow,
    ScaledFlow,
    check_exponential_bounds,
    check_iterated_bounds,
    check_unit_time_bounds,
    exponential_conditions,
    linearization_error,
    maps_unit_box_into_ball,
    random_unit_box,
    unit_box_grid,
)


@pytest.fixture(scope="module")
def model(ref_params):
    return ModelFieldFlow(ref_params, coupling=1.0, cutoff_radius=1.0)


def test_model_field_matches_quadrature_oracle(model, ref_params, rng):
    p = ref_params
    for _ in range(30):
        x = rng.uniform(-1, 1, 3)
        t = float(rng.uniform(0, 2))
        ref = oracles.model_field_state(p.sigma, p.mu, p.u, 1.0, 1.0, x, t)
        # global error of a 1e-12 local tolerance over a couple of time units
        assert np.allclose(model.eval(t, x), ref, rtol=1e-10, atol=5e-11)


def test_model_field_invariant_plane_and_axis(model):
    y = model.states([0.5, -0.3, 0.0], np.linspace(0, 3, 7))
    assert np.all(y[:, 2] == 0.0)
    z = model.states([0.0, 0.0, 0.1], np.linspace(0, 1, 5))
    assert np.all(z[:, :2] == 0.0)


def test_model_field_jacobian_by_differences(ref_params):
    model = ModelFieldFlow(ref_params, 1.0, 1.0, rtol=1e-14)
    x = np.array([0.4, 0.2, 0.6])
    J = model.jacobian_x(0.8, x)
    h = 1e-4
    fd = np.column_stack([(model.eval(0.8, x + h * e) - model.eval(0.8, x - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.allclose(J, fd, atol=1e-7)


def test_scaled_flow_shortcut_matches_definition(model):
    zf = ScaledFlow(model, 0.05)
    x = np.array([0.7, -0.1, 0.9])
    assert np.allclose(zf.eval(1.0, x), zf.eval_literal(1.0, x), rtol=1e-10, atol=1e-13)


def test_scaled_linear_flow_is_exact(ref_params):
    zf = ScaledFlow(LinearFlow(ref_params), 0.01)
    assert zf.is_linear and linearization_error(zf) == 0.0


def test_level_hit_linear_matches_closed_form(ref_params, rng):
    f = LinearFlow(ref_params)
    for x3 in rng.uniform(1e-6, 0.5, 20):
        hit = f.level_hit([1.0, 0.0, x3])
        assert hit.tau == pytest.approx(oracles.escape_time(x3, ref_params.u), rel=1e-14)
        assert hit.n == max(math.ceil(hit.tau) - 1, 0)


def test_level_hit_model_field(model, ref_params):
    x = np.array([1.0, 0.0, 1e-4])
    hit = model.level_hit(x)
    assert hit.tau == pytest.approx(oracles.escape_time(1e-4, ref_params.u), abs=1e-9)
    assert hit.endpoint[2] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NoEscape):
        model.level_hit([1.0, 0.0, 0.0])
    with pytest.raises(PreconditionViolated):
        model.level_hit([1.0, 0.0, 2.0])


def test_time_budget(model):
    with pytest.raises(IntegrationBudgetExceeded):
        model.eval(5000.0, [0.1, 0.0, 0.0])


def test_backends_agree(ref_params):
    if kernels.compiled_backend is None:
        pytest.skip("compiled kernels not built")
    a = ModelFieldFlow(ref_params, 1.0, 1.0, backend="compiled")
    b = ModelFieldFlow(ref_params, 1.0, 1.0, backend="python")
    x = np.array([0.3, 0.5, 0.2])
    times = np.linspace(0, 2, 9)
    assert np.allclose(a.states(x, times), b.states(x, times), rtol=1e-13, atol=1e-15)
    ha, hb = a.level_hit([1.0, 0.0, 1e-3]), b.level_hit([1.0, 0.0, 1e-3])
    assert ha.tau == pytest.approx(hb.tau, abs=1e-12)


def test_grids():
    g = unit_box_grid(5)
    assert g.shape == (125, 3) and np.all(np.hypot(g[:, 0], g[:, 1]) <= 1 + 1e-15)
    r = random_unit_box(np.random.default_rng(0), 100)
    assert np.all(np.hypot(r[:, 0], r[:, 1]) <= 1) and np.all(np.abs(r[:, 2]) <= 1)


def test_linearization_error_scales_quadratically(model):
    e1 = linearization_error(ScaledFlow(model, 0.1), 5, 6)
    e2 = linearization_error(ScaledFlow(model, 0.05), 5, 6)
    assert 3.0 < e1 / e2 < 5.0


def test_unit_time_bounds_hold_and_can_fail(model, rng):
    zf = ScaledFlow(model, 0.05)
    eta = 1.25 * linearization_error(zf, 5, 6)
    for x in random_unit_box(rng, 20):
        assert check_unit_time_bounds(zf, eta, x, float(rng.uniform(0, 1))).all_hold
    # with a tiny eta the nonlinear deviation shows up as a named violation
    rep = check_unit_time_bounds(zf, 1e-9, [0.8, 0.0, 0.9], 1.0)
    assert "stable_deviation" in rep.violations


def test_iterated_bounds_raise_when_leaving_the_box(ref_params):
    f = LinearFlow(ref_params)
    with pytest.raises(HypothesisFailed) as info:
        check_iterated_bounds(f, 0.01, [0.5, 0.0, 0.1], 5)
    assert info.value.step == 1
    assert check_iterated_bounds(f, 0.01, [0.5, 0.0, 1e-4], 5).all_hold


def test_exponential_bounds(ref_params):
    f = LinearFlow(ref_params)
    conds = exponential_conditions(ref_params, 0.1, 0.01, 3)
    assert all(v > 0 for v in conds.values())
    assert check_exponential_bounds(f, 0.1, 0.01, 3, [0.5, 0.2, 1e-4]).all_hold
    with pytest.raises(HypothesisFailed) as info:
        check_exponential_bounds(f, 0.001, 0.01, 3, [0.5, 0.2, 1e-4])
    assert info.value.conditions


def test_box_maps_into_ball(model):
    assert maps_unit_box_into_ball(ScaledFlow(model, 0.05), 5, 5)
