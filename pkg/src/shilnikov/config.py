"""Run configuration: a TOML file, validated, plus ``key=value`` overrides."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, ShilnikovError
from .geometry import StabilityParams

MODEL_KINDS = ("linear", "model-field", "flattened")
EXTERIOR_SHAPES = ("sine", "identity")


@dataclass
class ModelConfig:
    kind: str = "linear"
    sigma: float = math.nan
    mu: float = math.nan
    u: float = math.nan
    coupling: float = 0.0
    cutoff_radius: float = 1.0
    stable_curvature: float = 0.0
    unstable_curvature: float = 0.0
    similarity_seed: int = 0
    fit_radius: float = 0.1
    degree: int = 3
    rtol: float = 1e-12
    atol: float = 1e-300


@dataclass
class SectionConfig:
    omega: float = 0.0
    scale: float = 1.0
    section_radius: float = math.inf
    j: int | None = None
    t_U: float = 0.0
    t_L: float = 1.0
    plane_v: list = field(default_factory=lambda: [1.0, 0.0])
    plane_w: list = field(default_factory=lambda: [0.0, 1.0])
    exterior: str = "sine"
    exterior_beta: float = 0.25


@dataclass
class LedgerConfig:
    rate_margin: float = math.nan
    beta: float = 0.5
    level_high: float | str = "auto"
    level_low: float | str = "auto"
    jacobian_bound: float | str = "auto"
    height_escape: float | str = "auto"
    height_max: float | str = "auto"
    square_half_width: float | str = "auto"
    height_contained: float | str = "auto"
    split_angle: float | str = "auto"
    scale_limit: float | str = "auto"
    n_opt_grid: int = 1024


@dataclass
class GridConfig:
    n_psi: int = 10
    n_delta: int = 10


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class RunConfig:
    model: ModelConfig
    section: SectionConfig
    ledger: LedgerConfig
    grid: GridConfig
    output: OutputConfig
    seed: int = 0

    @property
    def params(self) -> StabilityParams:
        return StabilityParams(self.model.sigma, self.model.mu, self.model.u)


_SECTIONS = {"model": ModelConfig, "section": SectionConfig, "ledger": LedgerConfig, "grid": GridConfig,
             "output": OutputConfig}
_REQUIRED = {("model", "sigma"), ("model", "mu"), ("model", "u"), ("ledger", "rate_margin")}


def _coerce(section: str, key: str, value, target):
    where = f"{section}.{key}"
    if isinstance(target, str) and target == "auto" or key == "j":
        if value == "auto" or (key == "j" and value is None):
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number or \"auto\"")
        return int(value) if key == "j" else float(value)
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(target, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(target, list):
        if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value)):
            raise ConfigError(f"{where} must be a list of two numbers")
        return [float(v) for v in value]
    return value


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, item: str) -> None:
    """Apply ``section.key=value`` (value in TOML syntax, bare words taken as strings)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) == 1:
        raw[parts[0]] = _parse_value(text.strip())
        return
    if len(parts) != 2:
        raise ConfigError(f"override key {key!r} must be section.key")
    raw.setdefault(parts[0], {})[parts[1]] = _parse_value(text.strip())


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    built = {}
    for name, cls in _SECTIONS.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table")
        inst = cls()
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            setattr(inst, key, _coerce(name, key, value, getattr(inst, key)))
        built[name] = inst
    for sec, key in _REQUIRED:
        if key not in raw.get(sec, {}):
            raise ConfigError(f"missing required key {sec}.{key}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    cfg = RunConfig(seed=seed, **built)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    m, s, led = cfg.model, cfg.section, cfg.ledger
    if m.kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
    try:
        cfg.params
    except ShilnikovError as err:
        raise ConfigError(f"model eigenvalues: {err}") from err
    if m.coupling < 0 or m.cutoff_radius <= 0:
        raise ConfigError("model.coupling must be >= 0 and model.cutoff_radius > 0")
    if not 0 < m.rtol < 1e-3 or m.atol < 0:
        raise ConfigError("model.rtol must lie in (0, 1e-3) and model.atol >= 0")
    if m.degree < 1 or m.fit_radius <= 0:
        raise ConfigError("model.degree must be >= 1 and model.fit_radius > 0")
    if not s.scale > 0:
        raise ConfigError("section.scale must be positive")
    if not s.section_radius > 0:
        raise ConfigError("section.section_radius must be positive")
    if s.j is not None and s.j < 0:
        raise ConfigError("section.j must be non-negative")
    if s.exterior not in EXTERIOR_SHAPES:
        raise ConfigError(f"section.exterior must be one of {EXTERIOR_SHAPES}")
    if s.exterior_beta < 0:
        raise ConfigError("section.exterior_beta must be non-negative")
    if not led.rate_margin > 0:
        raise ConfigError("ledger.rate_margin must be positive")
    if not 0 < led.beta <= 0.5:
        raise ConfigError("ledger.beta must lie in (0, 1/2]")
    for key in ("level_high", "level_low", "jacobian_bound", "height_escape", "height_max", "square_half_width",
                "height_contained", "scale_limit"):
        v = getattr(led, key)
        if v != "auto" and not v > 0:
            raise ConfigError(f"ledger.{key} must be positive or \"auto\"")
    if cfg.grid.n_psi < 1 or cfg.grid.n_delta < 1:
        raise ConfigError("grid sizes must be positive")


def load_config(path, overrides: list[str] | None = None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"invalid TOML in {path}: {err}") from err
    for item in overrides or []:
        apply_override(raw, item)
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# building runtime objects


def _auto(v):
    return None if v == "auto" else v


def ledger_options(cfg: RunConfig):
    from .chaos import LedgerOptions

    led = cfg.ledger
    return LedgerOptions(
        rate_margin=led.rate_margin,
        beta=led.beta,
        level_high=_auto(led.level_high),
        level_low=_auto(led.level_low),
        jacobian_bound=_auto(led.jacobian_bound),
        height_escape=_auto(led.height_escape),
        height_max=_auto(led.height_max),
        square_half_width=_auto(led.square_half_width),
        height_contained=_auto(led.height_contained),
        split_angle=_auto(led.split_angle),
        scale_limit=_auto(led.scale_limit),
        n_opt_grid=led.n_opt_grid,
    )


def base_flow(cfg: RunConfig):
    from .flow import LinearFlow, ModelFieldFlow

    m = cfg.model
    if m.kind == "linear":
        return LinearFlow(cfg.params)
    if m.kind == "model-field":
        return ModelFieldFlow(cfg.params, m.coupling, m.cutoff_radius, m.rtol, m.atol)
    return flattened_pipeline(cfg)[3]


def flattened_pipeline(cfg: RunConfig):
    """``(field, frame, graph, flow)`` for the polynomial test field in random skewed coordinates."""
    from .flatten import PolynomialTestField, SimilarField, flatten_field, random_similarity

    m = cfg.model
    rng = np.random.default_rng(m.similarity_seed)
    vf = SimilarField(PolynomialTestField(cfg.params, m.stable_curvature, m.unstable_curvature),
                      random_similarity(rng))
    frame, graph, _, flow = flatten_field(vf, m.fit_radius, m.degree)
    return vf, frame, graph, flow


def section_times(cfg: RunConfig):
    """Scale and base exit angle: explicit, or read off the test spiral's ``j``-th exit crossing."""
    s = cfg.section
    if s.j is None:
        return s.scale, s.omega
    from .homoclinic import HomoclinicData, exit_crossings
    from .synthetic import spiral_flowline

    p = cfg.params
    h, dh = spiral_flowline(p.sigma, p.mu, p.u, s.t_U, s.t_L)
    st = exit_crossings(HomoclinicData(h, s.t_U, s.t_L, dh), s.j + 1)[s.j]
    return st.eps_j, st.omega_j


def build_system(cfg: RunConfig):
    """``(flow, plane, exterior, omega, scale)`` for ``build_ledger``."""
    from .flow import ScaledFlow
    from .sections import CoordinateExterior, PlaneChart

    scale, omega = section_times(cfg)
    base = base_flow(cfg)
    flow = base if scale == 1.0 else ScaledFlow(base, scale)
    plane = PlaneChart(cfg.section.plane_v, cfg.section.plane_w)
    exterior = CoordinateExterior(cfg.section.exterior_beta, cfg.section.exterior)
    return flow, plane, exterior, omega, scale


def build_ledger_from_config(cfg: RunConfig):
    from .chaos import build_ledger

    flow, plane, exterior, omega, scale = build_system(cfg)
    return build_ledger(flow, plane, exterior, omega, ledger_options(cfg), scale, cfg.section.section_radius)
