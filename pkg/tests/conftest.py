from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

from shilnikov.chaos import build_ledger
from shilnikov.config import build_system, ledger_options, load_config
from shilnikov.geometry import StabilityParams

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(Path(__file__).parent))


def config(name: str, *overrides: str):
    return load_config(CONFIGS / f"{name}.toml", list(overrides))


def ledger_for(cfg, options=None):
    flow, plane, ext, omega, scale = build_system(cfg)
    opts = ledger_options(cfg) if options is None else options
    return build_ledger(flow, plane, ext, omega, opts, scale, cfg.section.section_radius)


@pytest.fixture(scope="session")
def ref_params():
    return StabilityParams(-1.0, math.pi, 1.5)


@pytest.fixture(scope="session")
def reference_ledger():
    return ledger_for(config("reference"))


@pytest.fixture(scope="session")
def shadow_ledger():
    led = ledger_for(config("shadow"))
    assert led.feasible
    return led


@pytest.fixture(scope="session")
def model_ledger():
    led = ledger_for(config("model_field"))
    assert led.feasible
    return led


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, printed as they happen and again in the terminal summary
VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
