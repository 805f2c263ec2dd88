"""Scenario configuration files (TOML): load, validate, serialize."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .environment import Loop, RegressorSpec, Scenario, pv_theta, scenario
from .eo_mpc import ControllerConfig
from .errors import ConfigError
from .plant import ConstraintSets, LiftedPlant, lift_arx
from .polytope import HPolytope, box, regular_polygon
from .simulator import CONTROLLERS

TOP_KEYS = {"name", "steps", "band_frac", "band_floor", "loops", "controller", "baseline", "run"}
LOOP_KEYS = {"name", "x0", "plant", "constraints", "environment"}
ENV_KEYS = {"regressor", "theta_star", "noise", "theta0", "schedule", "irradiance"}
RUN_KEYS = {"seeds", "controllers", "strict", "audit", "out"}
BASELINE_KEYS = {"po_step", "q_bins", "q_actions", "q_alpha", "q_gamma", "q_epsilon"}
CONTROLLER_KEYS = {f.name for f in dataclasses.fields(ControllerConfig)} - {"seed", "strict"}


@dataclass
class RunSpec:
    seeds: list = field(default_factory=lambda: [0])
    controllers: list = field(default_factory=lambda: ["eo", "al"])
    strict: bool = False
    audit: bool = False
    out: str | None = None


@dataclass
class ScenarioConfig:
    scenario: Scenario
    run: RunSpec = field(default_factory=RunSpec)


def _check_keys(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a table")
    bad = set(d) - allowed
    if bad:
        raise ConfigError(f"{where}: unknown key(s) {sorted(bad)}")


def _array(v, where, ndim=None):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not numeric") from exc
    if ndim is not None and a.ndim != ndim:
        raise ConfigError(f"{where}: expected a {ndim}-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{where}: non-finite entries")
    return a


def parse_polytope(d, where: str) -> HPolytope:
    """``{H, h}``, ``{lo, hi}`` or ``{sides, radius}`` (regular polygon)."""
    if isinstance(d, dict) and {"H", "h"} <= set(d):
        _check_keys(d, {"H", "h"}, where)
        return HPolytope(_array(d["H"], f"{where}.H", 2), _array(d["h"], f"{where}.h", 1))
    if isinstance(d, dict) and {"lo", "hi"} <= set(d):
        _check_keys(d, {"lo", "hi"}, where)
        return box(_array(d["lo"], f"{where}.lo", 1), _array(d["hi"], f"{where}.hi", 1))
    if isinstance(d, dict) and {"sides", "radius"} <= set(d):
        _check_keys(d, {"sides", "radius"}, where)
        return regular_polygon(float(d["radius"]), int(d["sides"]))
    raise ConfigError(f"{where}: polytope needs {{H, h}}, {{lo, hi}} or {{sides, radius}}")


def polytope_dict(P: HPolytope) -> dict:
    return {"H": P.H.tolist(), "h": P.h.tolist()}


def parse_plant(d, where: str) -> LiftedPlant:
    if not isinstance(d, dict) or len(set(d) & {"arx", "state_space"}) != 1:
        raise ConfigError(f"{where}: give exactly one of 'arx' or 'state_space'")
    _check_keys(d, {"arx", "state_space"}, where)
    if "arx" in d:
        _check_keys(d["arx"], {"a", "b"}, f"{where}.arx")
        return lift_arx(_array(d["arx"]["a"], f"{where}.arx.a", 1), _array(d["arx"]["b"], f"{where}.arx.b", 1))
    ss = d["state_space"]
    _check_keys(ss, {"A", "B", "C"}, f"{where}.state_space")
    try:
        return LiftedPlant(*(_array(ss[k], f"{where}.state_space.{k}", 2) for k in "ABC"))
    except KeyError as exc:
        raise ConfigError(f"{where}.state_space: missing {exc}") from exc


def _parse_loop(d: dict, i: int) -> Loop:
    where = f"loops[{i}]"
    _check_keys(d, LOOP_KEYS, where)
    for k in ("plant", "constraints", "environment", "x0"):
        if k not in d:
            raise ConfigError(f"{where}: missing '{k}'")
    plant = parse_plant(d["plant"], f"{where}.plant")
    _check_keys(d["constraints"], {"X", "U"}, f"{where}.constraints")
    try:
        cons = ConstraintSets(parse_polytope(d["constraints"]["X"], f"{where}.constraints.X"),
                              parse_polytope(d["constraints"]["U"], f"{where}.constraints.U"))
    except KeyError as exc:
        raise ConfigError(f"{where}.constraints: missing {exc}") from exc
    env = d["environment"]
    _check_keys(env, ENV_KEYS, f"{where}.environment")
    try:
        spec = RegressorSpec.from_dict(env["regressor"])
    except KeyError as exc:
        raise ConfigError(f"{where}.environment.regressor: missing {exc}") from exc
    if "irradiance" in env and "schedule" in env:
        raise ConfigError(f"{where}.environment: give 'schedule' or 'irradiance', not both")
    schedule = []
    for j, e in enumerate(env.get("schedule", [])):
        _check_keys(e, {"step", "theta_star"}, f"{where}.environment.schedule[{j}]")
        schedule.append((int(e["step"]), _array(e["theta_star"], f"{where}.environment.schedule[{j}].theta_star", 1)))
    for j, e in enumerate(env.get("irradiance", [])):
        _check_keys(e, {"step", "irradiance"}, f"{where}.environment.irradiance[{j}]")
        schedule.append((int(e["step"]), pv_theta(float(e["irradiance"]), spec)))
    if "theta_star" in env:
        theta = _array(env["theta_star"], f"{where}.environment.theta_star", 1)
    elif schedule:
        theta = min(schedule, key=lambda s: s[0])[1]
    else:
        raise ConfigError(f"{where}.environment: missing 'theta_star'")
    for k in ("noise", "theta0"):
        if k not in env:
            raise ConfigError(f"{where}.environment: missing '{k}'")
    V = parse_polytope(env["noise"], f"{where}.environment.noise")
    theta0 = parse_polytope(env["theta0"], f"{where}.environment.theta0")
    x0 = _array(d["x0"], f"{where}.x0", 1)
    if theta.size != spec.p or theta0.dim != spec.p:
        raise ConfigError(f"{where}.environment: parameter dimension must be {spec.p}")
    if x0.size != plant.nx:
        raise ConfigError(f"{where}.x0: expected {plant.nx} entries")
    return Loop(d.get("name", f"loop{i}"), plant, cons, spec, theta, V, theta0, x0, schedule)


def from_dict(d: dict) -> ScenarioConfig:
    """Validate a configuration tree; every error names the offending field."""
    _check_keys(d, TOP_KEYS, "config")
    loops = d.get("loops")
    if not loops:
        raise ConfigError("config: at least one entry in 'loops' is required")
    try:
        parsed = [_parse_loop(lp, i) for i, lp in enumerate(loops)]
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"loops: {exc}") from exc
    ctrl = dict(d.get("controller", {}))
    _check_keys(ctrl, CONTROLLER_KEYS, "controller")
    try:
        cfg = ControllerConfig(**ctrl)
        for lp in parsed:
            cfg.weights(lp.plant.nx, lp.plant.nu, lp.plant.ny)
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from exc
    base = dict(d.get("baseline", {}))
    _check_keys(base, BASELINE_KEYS, "baseline")
    run = dict(d.get("run", {}))
    _check_keys(run, RUN_KEYS, "run")
    spec = RunSpec(**run)
    spec.seeds = [int(s) for s in spec.seeds]
    bad = [c for c in spec.controllers if c not in CONTROLLERS]
    if bad:
        raise ConfigError(f"run.controllers: unknown {bad}; choose from {list(CONTROLLERS)}")
    steps = int(d.get("steps", 100))
    if steps < 1:
        raise ConfigError("steps: must be positive")
    sc = Scenario(d.get("name", "custom"), parsed, steps, ctrl, base,
                  float(d.get("band_frac", 0.05)), float(d.get("band_floor", 0.0)))
    return ScenarioConfig(sc, spec)


def to_dict(cfg: ScenarioConfig) -> dict:
    sc = cfg.scenario
    loops = []
    for lp in sc.loops:
        env = {"regressor": lp.spec.to_dict(), "theta_star": lp.theta_star.tolist(),
               "noise": polytope_dict(lp.V), "theta0": polytope_dict(lp.theta0)}
        if lp.schedule:
            env["schedule"] = [{"step": int(s), "theta_star": np.asarray(t).tolist()} for s, t in lp.schedule]
        loops.append({"name": lp.name, "x0": lp.x0.tolist(), "plant": lp.plant.to_dict(),
                      "constraints": {"X": polytope_dict(lp.constraints.X),
                                      "U": polytope_dict(lp.constraints.U)},
                      "environment": env})
    run = {k: v for k, v in dataclasses.asdict(cfg.run).items() if v is not None}
    return {"name": sc.name, "steps": sc.steps, "band_frac": sc.band_frac,
            "band_floor": sc.band_floor, "controller": _plain(sc.controller),
            "baseline": _plain(sc.baseline), "run": run, "loops": loops}


def _plain(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if v is None:
            continue
        out[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
    return out


def dumps(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str) -> ScenarioConfig:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}") from exc
    return from_dict(d)


def load(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        return loads(p.read_text())
    except ConfigError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def builtin(name: str, run: RunSpec | None = None) -> ScenarioConfig:
    return ScenarioConfig(scenario(name), run or RunSpec())


def bundled_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.toml"


def equal(a: ScenarioConfig, b: ScenarioConfig) -> bool:
    """Field-wise equality (arrays compared exactly)."""
    return to_dict(a) == to_dict(b)


__all__ = ["ScenarioConfig", "RunSpec", "load", "loads", "dumps", "from_dict", "to_dict",
           "builtin", "bundled_path", "equal", "parse_polytope"]
