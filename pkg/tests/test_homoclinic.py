from __future__ import annotations

import math

import numpy as np
import pytest

from shilnikov.errors import EpsTooLarge, NotEnoughCrossings, PreconditionViolated
from shilnikov.flow import LinearFlow
from shilnikov.homoclinic import (
    HomoclinicData,
    SectionTimes,
    check_transversality,
    crossings_to_csv,
    entry_time,
    exit_crossings,
    exterior_travel_time,
    section_radius,
)
from shilnikov.synthetic import RigidRotationFlow, spiral_flowline


@pytest.fixture(scope="module")
def spiral(ref_params):
    p = ref_params
    h, dh = spiral_flowline(p.sigma, p.mu, p.u, 0.0, 1.0)
    return HomoclinicData(h, 0.0, 1.0, dh)


def test_structure(spiral):
    rep = spiral.check_structure(-5.0, 8.0)
    assert rep["ok"] and rep["positive_branch"]


def test_entry_time_inverts_the_ray(spiral, ref_params):
    for eps in (1e-3, 0.1, 0.5):
        t = entry_time(spiral, eps)
        assert t == pytest.approx(math.log(eps) / ref_params.u, abs=1e-12)
    with pytest.raises(EpsTooLarge):
        entry_time(spiral, 2.0)


def test_exit_crossings_decrease(spiral, ref_params):
    sts = exit_crossings(spiral, 4)
    eps = [s.eps_j for s in sts]
    assert all(a > b for a, b in zip(eps, eps[1:]))
    for s in sts:
        z = spiral(s.t_I_j)
        assert s.eps_j == pytest.approx(np.linalg.norm(z))
        assert math.cos(s.omega_j) == pytest.approx(z[0] / s.eps_j)
        assert spiral(s.t_E_eps)[2] == pytest.approx(s.eps_j, rel=1e-10)
    with pytest.raises(NotEnoughCrossings):
        exit_crossings(spiral, 5, t_end=3.0)


def test_from_seed_needs_both_pieces(ref_params):
    # a flowline of the linear flow on the unstable axis never returns to the plane
    with pytest.raises(PreconditionViolated):
        HomoclinicData.from_seed(LinearFlow(ref_params), [0.0, 0.0, 1e-3], 3.0, 2.0)


def test_transversality():
    rot = RigidRotationFlow()
    rep = check_transversality(rot, [0.0, 0.0, 1.0])
    assert rep.kind == "exit" and rep.transversal
    rep = check_transversality(rot, [1.0, 0.0, 0.0])
    assert rep.kind == "entry" and rep.inward
    with pytest.raises(PreconditionViolated):
        check_transversality(rot, [0.5, 0.0, 0.5])


def test_exterior_travel_time_rigid_rotation():
    rot = RigidRotationFlow()
    t_ref = rot.arc_time([0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    st = SectionTimes(0, 0.0, t_ref + 0.3, 1.0, math.nan, 0.0)
    t = exterior_travel_time(rot, st, [0.0, 0.0, 1.0])
    assert t == pytest.approx(t_ref, abs=1e-10)
    r = section_radius(rot, st)
    assert 0 < r <= 0.5


def test_crossings_csv(tmp_path, spiral):
    path = tmp_path / "x.csv"
    crossings_to_csv(exit_crossings(spiral, 2), path)
    assert path.read_text().splitlines()[0] == "j,t_I_j,eps_j,r_j,omega_j"
