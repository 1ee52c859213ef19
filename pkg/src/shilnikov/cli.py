"""Command-line driver.

Exit codes: 0 success, 1 usage or config error, 2 infeasible ledger,
3 a numerical verification failed at run time.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, PreconditionViolated, RefinementFailed, ShilnikovError

log = logging.getLogger("shilnikov")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 1, 2, 3


def _load(args):
    from .config import load_config

    return load_config(args.config, args.set)


def _out_path(cfg, args, default_name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    d = Path(cfg.output.dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / default_name


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _ledger_or_exit(cfg, out=sys.stdout):
    from .config import build_ledger_from_config

    ledger = build_ledger_from_config(cfg)
    if not ledger.feasible:
        name = ledger.first_failure
        print(f"infeasible: {name} (slack {ledger.slacks[name]:.6g})", file=out)
        return ledger, False
    return ledger, True


def slack_table(ledger) -> str:
    from .chaos import FLAG_ORDER

    lines = [f"{'relation':<26}{'slack':>24}  holds"]
    for k in FLAG_ORDER:
        s = ledger.slacks[k]
        lines.append(f"{k:<26}{s:>24.10g}  {'yes' if s > 0 else 'NO'}")
    return "\n".join(lines)


def cmd_check_params(cfg, args, out=sys.stdout) -> int:
    from .config import build_ledger_from_config

    ledger = build_ledger_from_config(cfg)
    print(slack_table(ledger), file=out)
    dump = ledger.as_dict()
    for k, v in dump.items():
        if k != "slacks":
            print(f"{k} = {_fmt(v)}", file=out)
    if getattr(args, "json", None):
        with open(args.json, "w") as fh:
            json.dump(dump, fh, indent=2, default=str)
    if not ledger.feasible:
        name = ledger.first_failure
        print(f"infeasible: first failure {name} (slack {ledger.slacks[name]:.6g})", file=out)
        return EXIT_INFEASIBLE
    print("feasible", file=out)
    return EXIT_OK


RETURN_MAP_COLUMNS = ["psi", "delta", "q1", "q2", "Phi", "tau", "n", "band", "margin", "contained"]


def cmd_return_map(cfg, args, out=sys.stdout) -> int:
    """Grid of the return map over the square's offsets and the two levels.

    ``contained`` says the image lies in the square ``[-alpha, alpha]^2``.
    """
    from .angles import angle_lift
    from .chaos import classify
    from .sections import write_rows

    ledger, ok = _ledger_or_exit(cfg, out)
    if not ok:
        return EXIT_INFEASIBLE
    n_psi, n_delta = cfg.grid.n_psi, cfg.grid.n_delta
    if args.grid:
        try:
            n_psi, n_delta = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            print(f"bad grid {args.grid!r}; expected e.g. 10x10", file=out)
            return EXIT_USAGE
    a = ledger.square_half_width
    psis = np.linspace(-a, a, n_psi)
    deltas = np.geomspace(ledger.level_low, ledger.level_high, n_delta)
    rows = []
    for psi in psis:
        for d in deltas:
            rp = ledger.system.evaluate(float(psi), float(d))
            band, margin = classify(ledger, float(psi), float(d), rp.phi)
            rows.append({
                "psi": float(psi), "delta": float(d), "q1": rp.q1, "q2": rp.q2, "Phi": rp.phi, "tau": rp.tau,
                "n": rp.n, "band": "neither" if band is None else band, "margin": margin,
                "contained": bool(abs(rp.q1) <= a and abs(rp.q2) <= a),
            })
    path = _out_path(cfg, args, "return_map.csv")
    write_rows(rows, path, RETURN_MAP_COLUMNS)
    bad = sum(not r["contained"] for r in rows)
    print(f"wrote {len(rows)} rows to {path}; contained: {len(rows) - bad}/{len(rows)}", file=out)
    if args.trace:
        rp = ledger.system.evaluate(0.0, ledger.level_high)
        lift = angle_lift(ledger.system.flow, ledger.system.omega, ledger.level_high, rp.tau)
        lift.to_csv(args.trace)
        print(f"wrote spiral trace ({len(lift.times)} samples) to {args.trace}", file=out)
    return EXIT_OK if bad == 0 else EXIT_RUNTIME


def cmd_shadow(cfg, args, out=sys.stdout) -> int:
    from .chaos import SymbolSeq, shadow_forward, shadow_window

    try:
        seq = SymbolSeq.parse(args.symbols)
    except PreconditionViolated as err:
        print(f"usage error: {err}", file=out)
        return EXIT_USAGE
    ledger, ok = _ledger_or_exit(cfg, out)
    if not ok:
        return EXIT_INFEASIBLE
    try:
        if seq.offset < 0:
            run = shadow_window(ledger, seq)
            rec = run.record
            for k, c, d in zip(run.depths, run.centres, np.concatenate([[math.nan], run.differences])):
                print(f"depth {k}: z0 = ({c[0]:.17g}, {c[1]:.17g}) change {d:.3g}", file=out)
            print(f"centre changes non-increasing: {_fmt(run.decreasing)}", file=out)
        else:
            rec = shadow_forward(ledger, seq)
    except RefinementFailed as err:
        print(f"refinement failed at step {err.step}: {err} ({err.diagnostic})", file=out)
        return EXIT_RUNTIME
    path = _out_path(cfg, args, "trajectory.csv")
    rec.to_csv(path)
    print(f"verified {_fmt(rec.verified)} max_residual {rec.max_residual:.3g} min_margin {rec.min_margin:.6g}",
          file=out)
    return EXIT_OK if rec.verified else EXIT_RUNTIME


def cmd_flatten(cfg, args, out=sys.stdout) -> int:
    from .config import flattened_pipeline
    from .flatten import stitched_seed, verify_flat_structure

    vf, frame, graph, flow = flattened_pipeline(cfg)
    radius = graph.r_hat or cfg.model.fit_radius
    # the test field has no homoclinic orbit; F2/F5 run on an axis flowline joined to a plane flowline
    seed = stitched_seed(flow, 0.4 * radius, [0.6 * radius, 0.2 * radius, 0.0])
    rep = verify_flat_structure(flow, seed, radius=radius, seed=cfg.seed)
    print(f"eigenframe residual {frame.residual:.3g}", file=out)
    print(f"graph defects {graph.defects}", file=out)
    for row in rep.rows():
        print(f"{row['property']}: {row['status']} residual {row['residual']:.3g} {row['detail']}", file=out)
    print(f"certified radius {rep.certified_radius:.6g}", file=out)
    path = _out_path(cfg, args, "flatten.json")
    with open(path, "w") as fh:
        json.dump({"frame": frame.describe(), "graph": graph.to_dict(), "checks": rep.rows(),
                   "certified_radius": rep.certified_radius}, fh, indent=2, default=str)
    print(f"wrote {path}", file=out)
    return EXIT_OK if rep.all_pass else EXIT_RUNTIME


def cmd_verify_estimates(cfg, args, out=sys.stdout) -> int:
    """Random samples of the unit-time and iterated estimates for the configured flow."""
    from .angles import angle_correction
    from .config import build_system
    from .errors import HypothesisFailed
    from .flow import check_iterated_bounds, check_unit_time_bounds, linearization_error, random_unit_box

    flow, *_ = build_system(cfg)
    rng = np.random.default_rng(cfg.seed)
    eta = cfg.ledger.jacobian_bound
    if eta == "auto":
        eta = max(1.25 * linearization_error(flow), 1e-3)
    n = args.samples
    viol = {"unit_time": 0, "iterated": 0, "angle": 0}
    skipped = 0
    for x in random_unit_box(rng, n):
        t = float(rng.uniform(0.0, 1.0))
        if not check_unit_time_bounds(flow, eta, x, t).all_hold:
            viol["unit_time"] += 1
        try:
            if not check_iterated_bounds(flow, eta, x, int(rng.integers(0, 21))).all_hold:
                viol["iterated"] += 1
        except HypothesisFailed:
            skipped += 1
        if math.hypot(x[0], x[1]) > 0:
            psi = math.atan2(x[1], x[0])
            c = angle_correction(flow, eta, x, psi, t)
            if abs(c.delta) > c.bound + 1e-12:
                viol["angle"] += 1
    for k, v in viol.items():
        print(f"{k}: {v} violations in {n} samples", file=out)
    print(f"iterated samples leaving the box (skipped): {skipped}", file=out)
    print(f"eta = {eta:.6g}", file=out)
    return EXIT_OK if not any(viol.values()) else EXIT_RUNTIME


COMMANDS = {
    "check-params": cmd_check_params,
    "return-map": cmd_return_map,
    "shadow": cmd_shadow,
    "flatten": cmd_flatten,
    "verify-estimates": cmd_verify_estimates,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shilnikov", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. ledger.level_high=1e-4")
        return p

    p = common(sub.add_parser("check-params", help="build the parameter ledger and print its slacks"))
    p.add_argument("--json", help="also write the ledger as JSON")
    p = common(sub.add_parser("return-map", help="evaluate the return map on a grid"))
    p.add_argument("--grid", help="grid size such as 10x10 (offsets x heights)")
    p.add_argument("--out", help="CSV path")
    p.add_argument("--trace", help="write the angle trace of one flowline to this CSV")
    p = common(sub.add_parser("shadow", help="realize a symbol sequence"))
    p.add_argument("symbols", help="e.g. 0101, 0^5 1, or w:0^5 for a window centred at 0")
    p.add_argument("--out", help="CSV path")
    p = common(sub.add_parser("flatten", help="flatten the configured test field and check the flat structure"))
    p.add_argument("--out", help="JSON path")
    p = common(sub.add_parser("verify-estimates", help="sample the linearization estimates"))
    p.add_argument("--samples", type=int, default=1000)
    return ap


def main(argv=None, out=sys.stdout) -> int:
    logging.basicConfig(level=os.environ.get("SHILNIKOV_LOG_LEVEL", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as err:
        print(f"config error: {err}", file=out)
        return EXIT_USAGE
    except ShilnikovError as err:
        print(f"error: {type(err).__name__}: {err}", file=out)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
