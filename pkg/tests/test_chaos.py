from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
import perturbations
from conftest import config
from shilnikov.chaos import (
    FLAG_ORDER,
    AffineMap,
    PiecewiseChebyshev,
    SymbolSeq,
    VerticalSegment,
    angle_crossings,
    angle_gap,
    classify,
    height_for_angle,
    in_rectangle,
    level_exponent,
    level_factor,
    level_separation_bound,
    level_separation_slack,
    membership,
    refine_curve,
    shadow_forward,
    shadow_window,
    spiral_product,
)
from shilnikov.errors import CrossingNotFound, GapViolated, LedgerInfeasible, PreconditionViolated, WindowBudgetExceeded


def test_level_constants_match_mpmath(ref_params):
    c, k = oracles.level_constants(-1.0, math.pi, 1.5, 0.1)
    assert level_exponent(ref_params, 0.1) == pytest.approx(float(c), rel=1e-14)
    assert level_factor(ref_params, 0.1) == pytest.approx(float(k), rel=1e-13)
    assert spiral_product(ref_params, 0.1) == pytest.approx(float(c) * 1.1 / 1.4, rel=1e-14)


def test_separation_bound_is_the_zero_of_its_slack(ref_params):
    b = level_separation_bound(ref_params, 0.01, 1.0)
    assert level_separation_slack(ref_params, 0.01, 1.0, b) == pytest.approx(0.0, abs=1e-9)
    assert level_separation_slack(ref_params, 0.01, 1.0, 0.5 * b) > 0
    assert level_separation_slack(ref_params, 0.01, 1.0, 2.0 * b) < 0


def test_reference_ledger_names_its_failures(reference_ledger):
    led = reference_ledger
    assert not led.feasible
    assert led.first_failure == "delta2_below_delta_beta"
    assert not led.flags["level_separation"]
    with pytest.raises(LedgerInfeasible) as info:
        led.require_feasible()
    assert info.value.name == "delta2_below_delta_beta"
    d = led.as_dict()
    assert list(d["slacks"]) == list(FLAG_ORDER) and d["feasible"] is False


def test_reference_ledger_auto_levels_are_feasible():
    led = perturbations.baseline(config("reference", "ledger.level_high=\"auto\"")).ledger
    assert led.feasible
    assert led.level_low == pytest.approx(oracles.lower_level(-1.0, math.pi, 1.5, 0.1, led.level_high), rel=1e-12)


def test_shadow_ledger_quantities(shadow_ledger):
    led = shadow_ledger
    assert led.level_low == pytest.approx(oracles.lower_level(-1.0, math.pi, 1.5, 0.01, led.level_high), rel=1e-12)
    assert led.level_high < led.height_contained <= 2 * led.square_half_width / 3
    assert led.square_half_width < led.height_max < led.height_escape
    assert led.angle_max_low + math.pi < led.split_angle < led.angle_min_high - math.pi
    assert math.cos(led.split_angle) == pytest.approx(0.0, abs=1e-12)  # direction of w = e2


def test_options_round_trip(shadow_ledger):
    base = perturbations.baseline(config("shadow"))
    again = base.build(shadow_ledger.options())
    assert again.feasible
    assert again.level_high == shadow_ledger.level_high and again.split_angle == shadow_ledger.split_angle


@pytest.mark.parametrize("name", [n for n in FLAG_ORDER if n != "eta_smallness"])
def test_single_relation_flips(name):
    base = perturbations.baseline(config("shadow"))
    led = perturbations.perturb(name, base)
    expected = {name} | perturbations.FORCED_COMPANIONS.get(name, set())
    assert perturbations.failed(led) == expected


@pytest.mark.slow
def test_bound_below_measured_error_flips_alone():
    nonlinear = perturbations.baseline(config("model_field"))
    led = perturbations.perturb("eta_smallness", perturbations.baseline(config("shadow")), nonlinear)
    assert perturbations.failed(led) == {"eta_smallness"}


def test_angle_gap_closed_form(reference_ledger):
    rep = angle_gap(reference_ledger)
    ref = oracles.linear_gap(-1.0, math.pi, 1.5, 0.1, 1e-3)
    assert rep.gap == pytest.approx(ref, abs=1e-6)
    assert rep.margin > 1 and rep.grid_change < 1e-9


def test_angle_gap_violation_raises(shadow_ledger):
    import dataclasses

    squeezed = dataclasses.replace(shadow_ledger, level_low=shadow_ledger.level_high * 0.5)
    with pytest.raises(GapViolated):
        angle_gap(squeezed, n_grid=64)
    assert angle_gap(squeezed, n_grid=64, raise_on_violation=False).margin < 0


def test_classify_and_membership(shadow_ledger):
    led = shadow_ledger
    s = led.split_angle
    assert classify(led, 0.0, 1e-12, s - 0.5) == (0, 0.5)
    band, m = classify(led, 0.0, 1e-12, s + 1.0)
    assert band == 1 and m == pytest.approx(1.0)
    assert classify(led, 0.0, 1e-12, s + 4.0)[0] is None
    assert not in_rectangle(led, 0.0, 2 * led.level_high)
    assert membership(led, 0.0, 2 * led.level_high) == "neither"
    e0 = height_for_angle(led, 0.0, s - 0.5 * math.pi)
    assert membership(led, 0.0, e0.delta) == "M0"
    e1 = height_for_angle(led, 0.0, s + 0.5 * math.pi)
    assert membership(led, 0.0, e1.delta) == "M1"


def test_height_for_angle_linear_closed_form(shadow_ledger):
    led = shadow_ledger
    e = height_for_angle(led, 0.01, led.split_angle)
    # invert the linear exit angle by hand
    ref = math.exp(-(led.system.omega + 0.01 - led.split_angle) * 1.5 / math.pi)
    assert e.delta == pytest.approx(ref, rel=1e-12)
    with pytest.raises(CrossingNotFound):
        height_for_angle(led, 0.0, led.angle_min_high + 10.0)


def test_crossings_are_ordered_and_reversible(shadow_ledger):
    led = shadow_ledger
    seg = VerticalSegment(led.level_low, led.level_high)
    cr = angle_crossings(led, seg)
    assert 0 < cr.a0 < cr.b0 <= cr.a1 < cr.b1 < 1
    rev = angle_crossings(led, lambda w: seg(1.0 - w))
    assert rev.a0 == pytest.approx(1 - cr.b1, abs=1e-14) and rev.b1 == pytest.approx(1 - cr.a0, abs=1e-14)


def test_chebyshev_interpolant():
    f = lambda w: np.array([math.sin(7 * w), math.exp(w)])
    pc = PiecewiseChebyshev(f, 1e-13)
    for w in np.linspace(0, 1, 33):
        assert np.allclose(pc(w), f(w), atol=1e-12)
    assert len(pc.pieces) >= 1


def test_affine_map_exact():
    m = AffineMap(Fraction(1, 3), Fraction(-1, 7))
    assert m(Fraction(1)) == Fraction(4, 21)
    assert m.image() == (Fraction(4, 21), Fraction(1, 3))


@pytest.mark.parametrize("symbol", [0, 1])
def test_refinement_image_joins_the_levels(shadow_ledger, symbol):
    led = shadow_ledger
    ref = refine_curve(led, VerticalSegment(led.level_low, led.level_high), symbol)
    lo, hi = ref.curve(0.0), ref.curve(1.0)
    assert lo[1] == pytest.approx(led.level_low, rel=1e-8)
    assert hi[1] == pytest.approx(led.level_high, rel=1e-8)
    band, _ = classify(led, 0.0, led.level_low + 0.5 * (ref.a + ref.b) * (led.level_high - led.level_low))
    assert band == symbol


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_symbol_parse_round_trip(bits):
    text = "".join(map(str, bits))
    seq = SymbolSeq.parse(text)
    assert seq.symbols == bits and str(seq) == text and seq.offset == 0


def test_symbol_parse_repeats_and_windows():
    assert SymbolSeq.parse("0^3 1 01^2").symbols == [0, 0, 0, 1, 0, 1, 0, 1]
    assert SymbolSeq.parse("0^31").symbols == [0] * 31
    w = SymbolSeq.parse("w:0^5")
    assert w.offset == -2 and w.at(-2) == 0 and w.at(2) == 0
    for bad in ("", "  ", "012", "w:01", "0^", "a"):
        with pytest.raises(PreconditionViolated):
            SymbolSeq.parse(bad)


def test_shadow_forward_short(shadow_ledger):
    rec = shadow_forward(shadow_ledger, "01101")
    assert rec.verified
    assert [b for b in rec.bands] == [0, 1, 1, 0, 1]
    assert rec.max_residual < 1e-9 and rec.min_margin > 0
    for (a0, b0), (a1, b1) in zip(rec.intervals, rec.intervals[1:]):
        assert a0 <= a1 < b1 <= b0
    text = rec.to_csv()
    assert text.splitlines()[0] == "n,s_n,psi,delta,Phi,margin,residual" and len(text.splitlines()) == 6
    assert text == shadow_forward(shadow_ledger, "01101").to_csv()


def test_shadow_window(shadow_ledger):
    run = shadow_window(shadow_ledger, "w:0^9")
    assert run.depths == [2, 4]
    assert run.record.verified and run.decreasing
    with pytest.raises(WindowBudgetExceeded):
        shadow_window(shadow_ledger, "w:0^9", max_length=5)
    with pytest.raises(PreconditionViolated):
        shadow_window(shadow_ledger, SymbolSeq([0, 1], -1))
