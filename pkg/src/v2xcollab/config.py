"""Experiment configuration: a single TOML file mapped onto dataclasses.

Every key is optional; omitted keys take the defaults below, which are also
written out in ``configs/default_config.toml``. Unknown keys and wrongly
typed values raise :class:`ConfigError` naming the dotted field and, where
it can be found, the line.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli

from .collab import CollabConfig, Estimator, StrategyId
from .detector import NoiseProfile, STOCK_PROFILES
from .errors import ConfigError, ContractViolation
from .flow import FlowNoiseProfile
from .scene import AGENT_ORDER, DETECTION_RANGE, LidarSpec, ScenarioParams

GT_MODES = ("any_agent", "ego_only")
ALL_STRATEGIES = tuple(s.value for s in StrategyId)


def default_scenario() -> ScenarioParams:
    # short episodes keep the 30-seed ensemble within its time budget
    return ScenarioParams(duration=4.0)


def default_profiles() -> dict:
    return dict(STOCK_PROFILES)


@dataclass
class SweepConfig:
    agent_counts: tuple = (1, 2, 3, 4, 5, 6)
    agents_strategy: str = "LATE_EARLY"
    heterogeneity_profile: str = "profile-S"
    heterogeneity_strategies: tuple = ("LATE_EARLY", "LATE_ASYNC_PROP")


@dataclass
class ExperimentConfig:
    scenario: ScenarioParams = field(default_factory=default_scenario)
    profiles: dict = field(default_factory=default_profiles)
    flow_noise: FlowNoiseProfile = field(default_factory=lambda: FlowNoiseProfile(0.05, 0.02, 0.01))
    strategies: tuple = ALL_STRATEGIES
    seeds: tuple = tuple(range(30))
    gt_modes: tuple = GT_MODES
    lag: float = 0.2
    latency: float = 0.0
    estimator: str = "lag_weighted"
    sequence_length: int = 3
    nms_iou: float = 0.2
    half_range: float = DETECTION_RANGE
    wire_roundtrip: bool = False
    out_dir: str = "results"
    agents: Optional[int] = None  # participate in roster order; None = all
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("experiment.seeds: at least one seed is required")
        if not self.strategies:
            raise ConfigError("experiment.strategies: at least one strategy is required")
        for s in self.strategies:
            try:
                StrategyId.parse(s)
            except ContractViolation:
                raise ConfigError(f"experiment.strategies: unknown strategy {s!r}") from None
        for m in self.gt_modes:
            if m not in GT_MODES:
                raise ConfigError(f"experiment.gt_modes: unknown mode {m!r}")
        if not (self.lag >= 0 and math.isfinite(self.lag)):
            raise ConfigError("experiment.lag: must be a finite number >= 0")
        if self.latency < 0:
            raise ConfigError("experiment.latency: must be >= 0")
        try:
            Estimator.parse(self.estimator)
        except ContractViolation:
            raise ConfigError(f"experiment.estimator: expected eq5 or lag_weighted, got {self.estimator!r}") from None
        if self.sequence_length < 1:
            raise ConfigError("experiment.sequence_length: must be >= 1")
        if not 0 < self.nms_iou < 1:
            raise ConfigError("experiment.nms_iou: must lie in (0, 1)")
        try:
            self.scenario.validate()
        except ContractViolation as e:
            raise ConfigError(f"scenario: {e}") from None
        names = set(self.profiles)
        used = set(self.scenario.agent_profiles.values()) | {self.scenario.default_profile}
        missing = sorted(used - names)
        if missing:
            raise ConfigError(f"agents: profile {missing[0]!r} is not defined under [profiles]")
        if self.sweep.heterogeneity_profile not in names:
            raise ConfigError(f"sweep.heterogeneity_profile: profile {self.sweep.heterogeneity_profile!r} is not defined")
        if self.agents is not None and not 1 <= self.agents <= self.scenario.agent_count:
            raise ConfigError(f"experiment.agents: {self.agents} outside 1..{self.scenario.agent_count}")
        for n in self.sweep.agent_counts:
            if not 1 <= n <= self.scenario.agent_count:
                raise ConfigError(f"sweep.agent_counts: {n} outside 1..{self.scenario.agent_count}")
        return self

    def collab(self, **overrides) -> CollabConfig:
        base = dict(
            profiles=dict(self.profiles),
            flow_noise=self.flow_noise,
            lag=self.lag,
            latency=self.latency,
            estimator=self.estimator,
            sequence_length=self.sequence_length,
            nms_iou=self.nms_iou,
            half_range=self.half_range,
            wire_roundtrip=self.wire_roundtrip,
            participants=None if self.agents is None else AGENT_ORDER[: self.agents],
        )
        base.update(overrides)
        return CollabConfig(**base)


# named setups, mirrored one to one by the files in configs/


def ego_only_config() -> ExperimentConfig:
    """Remote agents on the noisier detector, scored against ego-visible objects only."""
    cfg = ExperimentConfig(
        scenario=dataclasses.replace(
            default_scenario(), object_count=70, default_profile="profile-S", agent_profiles={1: "profile-P"}
        ),
        strategies=("NONE", "LATE_SYNC", "LATE_ASYNC", "LATE_ASYNC_PROP", "LATE_EARLY"),
        gt_modes=("ego_only",),
        out_dir="results/ego_only",
    )
    return cfg.validate()


def agents_sweep_config() -> ExperimentConfig:
    return ExperimentConfig(seeds=tuple(range(10)), out_dir="results/agents_sweep").validate()


def heterogeneity_config() -> ExperimentConfig:
    return ExperimentConfig(seeds=tuple(range(10)), out_dir="results/heterogeneity").validate()


NAMED = {"ego_only": ego_only_config, "agents_sweep": agents_sweep_config, "heterogeneity": heterogeneity_config}


# schema: table -> {key: kind}; kinds are int, float, bool, str, list[int], list[str], pair, table

_SCENARIO_KEYS = {
    "object_count": "int",
    "dynamic_fraction": "float",
    "turn_fraction": "float",
    "small_object_fraction": "float",
    "speed_range": "pair",
    "yaw_rate_max": "float",
    "map_extent": "float",
    "road_half_width": "float",
    "agent_count": "int",
    "frame_rate": "float",
    "duration": "float",
    "vehicle_mount": "float",
    "irsu_mount": "float",
    "max_retries": "int",
}
_LIDAR_KEYS = {"beams": "int", "azimuth_bins": "int", "max_range": "float", "vertical_fov_deg": "pair"}
_EXPERIMENT_KEYS = {
    "strategies": "list[str]",
    "seeds": "list[int]",
    "gt_modes": "list[str]",
    "lag": "float",
    "latency": "float",
    "estimator": "str",
    "sequence_length": "int",
    "nms_iou": "float",
    "half_range": "float",
    "wire_roundtrip": "bool",
    "out_dir": "str",
    "agents": "int",
}
_AGENT_KEYS = {"detection_rate": "float", "default_profile": "str", "profiles": "table"}
_FLOW_KEYS = {"sigma": "float", "miss_rate": "float", "false_rate": "float"}
_PROFILE_KEYS = {
    "pos_sigma": "float",
    "yaw_sigma": "float",
    "size_sigma": "float",
    "fn_base": "float",
    "fn_halflife": "float",
    "fp_rate": "float",
    "score_tp": "pair",
    "score_fp": "pair",
    "min_points": "int",
    "modar_fn_discount": "float",
    "modar_pos_gain": "float",
}
_SWEEP_KEYS = {
    "agent_counts": "list[int]",
    "agents_strategy": "str",
    "heterogeneity_profile": "str",
    "heterogeneity_strategies": "list[str]",
}
_TOP = {"experiment", "scenario", "agents", "flow_noise", "profiles", "sweep"}


class _Source:
    """Finds the line of a dotted key for error messages."""

    def __init__(self, text: str, path: str):
        self.lines = text.splitlines()
        self.path = path

    def line_of(self, dotted: str) -> Optional[int]:
        parts = dotted.split(".")
        key = parts[-1]
        table = ".".join(parts[:-1])
        current = ""
        pat = re.compile(r'^\s*"?' + re.escape(key) + r'"?\s*=')
        header = re.compile(r"^\s*\[([^\]]+)\]")
        for i, ln in enumerate(self.lines, 1):
            m = header.match(ln)
            if m:
                current = m.group(1).strip().replace('"', "")
                if current == dotted:
                    return i
                continue
            if current == table and pat.match(ln):
                return i
        return None

    def error(self, dotted: str, msg: str) -> ConfigError:
        line = self.line_of(dotted)
        where = f"{self.path}:{line}: " if line else f"{self.path}: "
        return ConfigError(f"{where}{dotted}: {msg}")


def _coerce(src: _Source, dotted: str, kind: str, v):
    def bad(expected):
        return src.error(dotted, f"expected {expected}, got {type(v).__name__} {v!r}")

    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise bad("an integer")
        return v
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise bad("a number")
        return float(v)
    if kind == "bool":
        if not isinstance(v, bool):
            raise bad("true or false")
        return v
    if kind == "str":
        if not isinstance(v, str):
            raise bad("a string")
        return v
    if kind == "pair":
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
            raise bad("a list of two numbers")
        return (float(v[0]), float(v[1]))
    if kind == "list[int]":
        if not (isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v)):
            raise bad("a list of integers")
        return tuple(v)
    if kind == "list[str]":
        if not (isinstance(v, list) and all(isinstance(x, str) for x in v)):
            raise bad("a list of strings")
        return tuple(v)
    if kind == "table":
        if not isinstance(v, dict):
            raise bad("a table")
        return v
    raise AssertionError(kind)


def _section(src: _Source, data: dict, name: str, schema: dict) -> dict:
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise src.error(name, "expected a table")
    out = {}
    for k, v in raw.items():
        dotted = f"{name}.{k}"
        if k not in schema:
            raise src.error(dotted, "unknown key")
        out[k] = _coerce(src, dotted, schema[k], v)
    return out


def _build(src: _Source, data: dict) -> ExperimentConfig:
    for k in data:
        if k not in _TOP:
            raise src.error(k, f"unknown section; expected one of {sorted(_TOP)}")
    cfg = ExperimentConfig()

    scen = _section(src, data, "scenario", {**_SCENARIO_KEYS, "lidar": "table"})
    lidar_raw = scen.pop("lidar", None)
    lidar = LidarSpec()
    if lidar_raw is not None:
        lid = _section(src, {"scenario.lidar": lidar_raw}, "scenario.lidar", _LIDAR_KEYS)
        fov = lid.pop("vertical_fov_deg", None)
        if fov is not None:
            lid["vertical_fov"] = (math.radians(fov[0]), math.radians(fov[1]))
        try:
            lidar = LidarSpec(**lid)
        except ContractViolation as e:
            raise src.error("scenario.lidar", str(e)) from None

    agents = _section(src, data, "agents", _AGENT_KEYS)
    roster = {}
    for k, v in agents.pop("profiles", {}).items():
        dotted = f"agents.profiles.{k}"
        if not k.isdigit():
            raise src.error(dotted, "agent ids must be integers")
        roster[int(k)] = _coerce(src, dotted, "str", v)
    scenario_kw = dict(scen)
    if "detection_rate" in agents:
        scenario_kw["detection_rate"] = agents["detection_rate"]
    if "default_profile" in agents:
        scenario_kw["default_profile"] = agents["default_profile"]
    cfg.scenario = dataclasses.replace(cfg.scenario, lidar=lidar, agent_profiles=roster, **scenario_kw)

    flow = _section(src, data, "flow_noise", _FLOW_KEYS)
    try:
        cfg.flow_noise = dataclasses.replace(cfg.flow_noise, **flow)
    except ContractViolation as e:
        raise src.error("flow_noise", str(e)) from None

    raw_profiles = data.get("profiles", {})
    if not isinstance(raw_profiles, dict):
        raise src.error("profiles", "expected a table of profiles")
    profiles = default_profiles()
    for name, body in raw_profiles.items():
        if not isinstance(body, dict):
            raise src.error(f"profiles.{name}", "expected a table")
        kw = _section(src, {f"profiles.{name}": body}, f"profiles.{name}", _PROFILE_KEYS)
        base = profiles.get(name, NoiseProfile(name=name))
        try:
            profiles[name] = dataclasses.replace(base, name=name, **kw)
        except ContractViolation as e:
            raise src.error(f"profiles.{name}", str(e)) from None
    cfg.profiles = profiles

    exp = _section(src, data, "experiment", _EXPERIMENT_KEYS)
    if "strategies" in exp:
        exp["strategies"] = tuple(s.upper() for s in exp["strategies"])
    for k, v in exp.items():
        setattr(cfg, k, v)

    sweep = _section(src, data, "sweep", _SWEEP_KEYS)
    cfg.sweep = dataclasses.replace(cfg.sweep, **sweep)
    return cfg


def loads(text: str, path: str = "<config>") -> ExperimentConfig:
    src = _Source(text, path)
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return _build(src, data).validate()


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{p}: cannot read config: {e.strerror}") from None
    return loads(text, str(p))
