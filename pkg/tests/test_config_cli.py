from __future__ import annotations

import io
import json

import pytest

from conftest import CONFIGS, config
from shilnikov.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from shilnikov.config import apply_override, config_from_dict, ledger_options, load_config
from shilnikov.errors import ConfigError


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


def test_overrides_are_typed():
    cfg = config("shadow", "ledger.level_high=1e-9", "seed=4", "section.exterior=identity")
    assert cfg.ledger.level_high == 1e-9 and cfg.seed == 4 and cfg.section.exterior == "identity"
    assert ledger_options(cfg).level_high == 1e-9
    assert ledger_options(config("shadow")).level_high is None


@pytest.mark.parametrize("raw, message", [
    ({"model": {"sigma": -1.0, "mu": 1.0, "u": 1.5, "colour": 1}, "ledger": {"rate_margin": 0.1}}, "unknown key"),
    ({"model": {"sigma": -1.0, "mu": 1.0}, "ledger": {"rate_margin": 0.1}}, "missing required key"),
    ({"model": {"sigma": -1.0, "mu": 1.0, "u": 1.5}, "ledger": {"rate_margin": 0.1}, "extra": {}}, "unknown config"),
    ({"model": {"sigma": -1.0, "mu": 1.0, "u": 0.5}, "ledger": {"rate_margin": 0.1}}, "saddle"),
    ({"model": {"sigma": -1.0, "mu": 1.0, "u": 1.5}, "ledger": {"rate_margin": 0.1, "beta": 0.9}}, "beta"),
])
def test_config_errors(raw, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(raw)


def test_override_syntax_errors(tmp_path):
    with pytest.raises(ConfigError):
        apply_override({}, "no-equals-sign")
    with pytest.raises(ConfigError):
        apply_override({}, "a.b.c=1")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_check_params_exit_codes(tmp_path):
    code, text = run("check-params", str(CONFIGS / "reference.toml"))
    assert code == EXIT_INFEASIBLE and "first failure delta2_below_delta_beta" in text
    path = tmp_path / "ledger.json"
    code, text = run("check-params", str(CONFIGS / "shadow.toml"), "--json", str(path))
    assert code == EXIT_OK and text.rstrip().endswith("feasible")
    assert json.loads(path.read_text())["feasible"] is True
    assert run("check-params", str(CONFIGS / "reference.toml"), "--set", "ledger.beta=2")[0] == EXIT_USAGE
    assert run("no-such-command")[0] == EXIT_USAGE


def test_return_map_grid(tmp_path):
    out = tmp_path / "rm.csv"
    code, text = run("return-map", str(CONFIGS / "shadow.toml"), "--grid", "3x4", "--out", str(out))
    assert code == EXIT_OK and "contained: 12/12" in text
    assert len(out.read_text().splitlines()) == 13
    assert run("return-map", str(CONFIGS / "shadow.toml"), "--grid", "3by4", "--out", str(out))[0] == EXIT_USAGE
    assert run("return-map", str(CONFIGS / "reference.toml"), "--out", str(out))[0] == EXIT_INFEASIBLE


def test_shadow_cli(tmp_path):
    out = tmp_path / "t.csv"
    code, text = run("shadow", str(CONFIGS / "shadow.toml"), "0110", "--out", str(out))
    assert code == EXIT_OK and "verified true" in text
    assert len(out.read_text().splitlines()) == 5
    assert run("shadow", str(CONFIGS / "shadow.toml"), "012", "--out", str(out))[0] == EXIT_USAGE
    code, text = run("shadow", str(CONFIGS / "shadow.toml"), "w:0^5", "--out", str(out))
    assert code == EXIT_OK and "depth 2" in text


def test_flatten_cli(tmp_path):
    out = tmp_path / "f.json"
    code, text = run("flatten", str(CONFIGS / "flattened.toml"), "--out", str(out))
    assert code == EXIT_OK, text
    rows = {r["property"]: r["status"] for r in json.loads(out.read_text())["checks"]}
    assert set(rows.values()) == {"pass"}


def test_verify_estimates_cli():
    code, text = run("verify-estimates", str(CONFIGS / "model_field.toml"), "--samples", "20")
    assert code == EXIT_OK, text
    assert "unit_time: 0 violations in 20 samples" in text
