from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from shilnikov.errors import LambdaUnachievable, PreconditionViolated, SpectrumMismatch
from shilnikov.flatten import (
    LinearField,
    ManifoldGraph,
    PolynomialTestField,
    SimilarField,
    Straightener,
    eigenframe,
    extend_graph,
    fit_local_manifolds,
    flatten_field,
    random_similarity,
    stitched_seed,
    verify_flat_structure,
)


@pytest.fixture(scope="module")
def skew():
    return random_similarity(np.random.default_rng(3))


@pytest.fixture(scope="module")
def flattened(ref_params, skew):
    vf = SimilarField(PolynomialTestField(ref_params, 0.5, 0.0), skew)
    return flatten_field(vf, 0.1)


def test_eigenframe_recovers_parameters(ref_params, skew):
    fr = eigenframe(SimilarField(LinearField(ref_params.matrix), skew))
    assert fr.params.sigma == pytest.approx(-1.0, abs=1e-12)
    assert fr.params.mu == pytest.approx(math.pi, abs=1e-12)
    assert fr.params.u == pytest.approx(1.5, abs=1e-12)
    assert fr.residual < 1e-10
    assert np.allclose(eigenframe(LinearField(ref_params.matrix)).B, np.eye(3))


def test_eigenframe_rejects_wrong_spectrum():
    with pytest.raises(SpectrumMismatch):
        eigenframe(LinearField(np.diag([-1.0, -2.0, 1.0])))
    with pytest.raises(SpectrumMismatch):
        # saddle quantity sigma + u negative
        eigenframe(LinearField([[-2.0, 1.0, 0.0], [-1.0, -2.0, 0.0], [0.0, 0.0, 1.0]]))


def test_stable_graph_matches_collocation(ref_params):
    vf = PolynomialTestField(ref_params, 0.5, 0.0)
    g = fit_local_manifolds(vf, eigenframe(vf), 0.1)
    a11, a12, a22 = oracles.stable_graph_by_collocation(-1.0, math.pi, 1.5, 0.5)
    assert g.stable_coef[:3] == pytest.approx([a11, a12, a22], abs=1e-8)
    assert a11 == pytest.approx(vf.stable_graph_coefficient(), abs=1e-10)
    assert np.all(g.unstable_coef == 0.0)
    assert max(g.defects.values()) < 1e-6


def test_unstable_graph_matches_closed_form(ref_params):
    vf = PolynomialTestField(ref_params, 0.0, 0.4)
    g = fit_local_manifolds(vf, eigenframe(vf), 0.1)
    assert g.unstable_coef[0] == pytest.approx(vf.unstable_graph_coefficients(), abs=1e-8)
    assert np.all(g.stable_coef == 0.0)


def test_low_degree_gives_flat_graph(ref_params):
    vf = PolynomialTestField(ref_params, 0.5, 0.0)
    with pytest.warns(UserWarning):
        g = fit_local_manifolds(vf, eigenframe(vf), 0.1, degree=1)
    assert g.is_zero
    with pytest.raises(PreconditionViolated):
        fit_local_manifolds(vf, eigenframe(vf), 2.0)


def test_extension_slope_bound(ref_params):
    vf = PolynomialTestField(ref_params, 0.5, 0.0)
    local = fit_local_manifolds(vf, eigenframe(vf), 0.1)
    ext = extend_graph(local, 0.05, 0.1)
    assert ext.slope_sup() < 0.1
    assert ext.stable([0.3, 0.0]) == 0.0  # beyond 2 r_hat
    steep = ManifoldGraph(local.degree, 1e3 * local.stable_coef, local.unstable_coef, 0.1)
    with pytest.raises(LambdaUnachievable):
        extend_graph(steep, 0.05, 1e-3)
    with pytest.raises(PreconditionViolated):
        extend_graph(local, 0.2)


def test_straightener_inverse_round_trip(flattened, rng):
    _, graph, S, _ = flattened
    assert S.derivative_gap <= 0.5
    for _ in range(50):
        z = rng.uniform(-0.1, 0.1, 3)
        assert np.linalg.norm(S(S.inverse(z)) - z) < 1e-10
        assert np.linalg.norm(S.inverse(S(z)) - z) < 1e-10
    # the graphs are flattened: stable manifold goes to the plane
    x = np.array([0.02, -0.01])
    assert S([x[0], x[1], graph.stable(x)])[2] == pytest.approx(0.0, abs=1e-15)


def test_graph_dict_round_trip(flattened):
    graph = flattened[1]
    again = ManifoldGraph.from_dict(graph.to_dict())
    assert np.array_equal(again.stable_coef, graph.stable_coef)
    assert again.r_hat == graph.r_hat and again.degree == graph.degree
    Straightener(again)


def test_linear_field_recovers_linear_flow(ref_params, skew, rng):
    _, graph, _, flow = flatten_field(SimilarField(LinearField(ref_params.matrix), skew), 0.1)
    assert graph.is_zero
    for _ in range(5):
        t = float(rng.uniform(-1, 1))
        x = rng.uniform(-0.05, 0.05, 3)
        ref = oracles.linear_matrix(-1.0, math.pi, 1.5, t) @ x
        assert np.allclose(flow.eval(t, x), ref, atol=1e-7)


def test_flat_structure_report(flattened):
    flow = flattened[3]
    rep = verify_flat_structure(flow)
    rows = {r["property"]: r for r in rep.rows()}
    assert all(rows[k]["status"] == "pass" for k in ("F1", "F3", "F4"))
    assert rows["F2"]["status"] == rows["F5"]["status"] == "not checked"
    assert rows["F4"]["residual"] < 1e-8 and rep.certified_radius > 0
    seeded = verify_flat_structure(flow, stitched_seed(flow, 0.02, [0.03, 0.01, 0.0]))
    assert seeded.all_pass


def test_unflattened_field_fails_invariance(ref_params):
    from shilnikov.flatten import FlattenedFlow

    # without straightening, invariance holds only on a much smaller ball
    vf = PolynomialTestField(ref_params, 0.5, 0.0)
    flat = Straightener(ManifoldGraph.zero(0.1))
    rep = verify_flat_structure(FlattenedFlow(vf, eigenframe(vf), flat), radius=0.05, n_samples=4)
    assert rep.certified_radius < 1e-3
