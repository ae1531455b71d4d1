"""Scenario configuration: dataclasses plus YAML parsing and serialization.

Every physical quantity carries its unit in the key name (``ts_us``,
``speed_rpm``, ``Lq_uH`` ...). Parse errors report the 1-based line of the
offending key.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError, ScenarioError
from .plant import DisturbanceTerm

CONTROLLERS = ("none", "td_s1", "td_s2", "td_s3", "fd", "td_delta", "td_delta_adaptive_lut")


@dataclass
class Segment:
    """Profile breakpoint: from ``t_s`` on the value is ``value`` (reached after a linear ramp of ``ramp_s``)."""

    t_s: float
    value: float
    ramp_s: float = 0.0


@dataclass
class PlantConfig:
    R_ohm: float = 0.015
    Ld_uH: float = 45.0
    Lq_uH: float = 60.0
    psi_pm_mWb: float = 5.0
    pole_pairs: int = 4
    rated_current_a: float = 50.0
    foc_bandwidth_hz: float = 500.0
    u_max_v: float = 27.7


@dataclass
class NvhConfig:
    natural_freq_hz: float = 640.0
    damping: float = 0.2
    gain: float = 1.0


@dataclass
class NoiseConfig:
    speed_rpm: float = 0.5
    current_a: float = 0.05
    y: float = 0.005


@dataclass
class EstimatorConfig:
    gamma_g: float = 1e-3
    gamma_p: float = 1e-3
    sigma: float = 1e-3
    eps_sing: float = 1e-6
    # one [x1, x2] per order, or a single pair for all
    g_init: list = field(default_factory=lambda: [1.0, 0.0])
    theta_p_init: list = field(default_factory=lambda: [0.0, 0.0])
    adapt_transfer: bool = True
    normalize: bool = True


@dataclass
class ActiveLearningConfig:
    enabled: bool = False
    freq1_hz: float = 5.0
    freq2_hz: float = 8.0
    delta: float = 1.0
    threshold: float = 0.1


@dataclass
class QualityConfig:
    time_constants: list = field(default_factory=lambda: [0.90, 0.95, 0.99])
    decimation: int = 1


@dataclass
class LutConfig:
    dir: str | None = None
    beta: float = 0.5
    # upper bound on (1 - rho) * beta per step; None leaves it unbounded
    max_step: float | None = None


@dataclass
class StructureSection:
    variant: str = "S1_voltage"
    r_factor: float = 1.0
    l_factor: float = 1.0
    delay_samples: int = 1
    # volts (S1) or amperes (S2, S3) per normalized HC unit; scalar or one per order
    output_scale: Any = None


@dataclass
class FdSection:
    mu: float = 0.5
    g_step: float = 0.5
    update_periods: int = 1


@dataclass
class Scenario:
    name: str = "scenario"
    duration_s: float = 1.0
    ts_us: float = 100.0
    controller: str = "td_s1"
    orders: list = field(default_factory=lambda: [12])
    speed_profile: list = field(default_factory=lambda: [Segment(0.0, 1000.0)])
    torque_profile: list = field(default_factory=lambda: [Segment(0.0, 0.5)])
    seeds: list = field(default_factory=lambda: [0])
    plant: PlantConfig = field(default_factory=PlantConfig)
    nvh: NvhConfig = field(default_factory=NvhConfig)
    disturbance: list = field(default_factory=lambda: [DisturbanceTerm(12, 0.15, 0.4, 0.3, 1.2, 0.8)])
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    active_learning: ActiveLearningConfig = field(default_factory=ActiveLearningConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    lut: LutConfig = field(default_factory=LutConfig)
    structure: StructureSection = field(default_factory=StructureSection)
    fd: FdSection = field(default_factory=FdSection)

    @property
    def ts(self) -> float:
        return self.ts_us * 1e-6

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.ts))

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise ConfigurationError("duration_s must be > 0")
        if not self.ts_us > 0:
            raise ConfigurationError("ts_us must be > 0")
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}; expected one of {CONTROLLERS}")
        if not self.orders:
            raise ConfigurationError("at least one harmonic order is required")
        for m in self.orders:
            if int(m) != m or m < 1:
                raise ConfigurationError(f"harmonic orders must be positive integers, got {m}")
        if len(set(self.orders)) != len(self.orders):
            raise ConfigurationError("harmonic orders must be distinct")
        for name in ("speed_profile", "torque_profile"):
            prof = getattr(self, name)
            if not prof:
                raise ConfigurationError(f"{name} needs at least one segment")
            times = [s.t_s for s in prof]
            if times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigurationError(f"{name} segments must start at t_s = 0 and be strictly time-ordered")
            if any(s.ramp_s < 0 for s in prof):
                raise ConfigurationError(f"{name} ramps must be >= 0")
        if any(s.value < 0 for s in self.speed_profile):
            raise ConfigurationError("speeds must be >= 0")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")


def profile_value(profile: list[Segment], t: float) -> float:
    """Piecewise-constant profile with optional linear ramps into each breakpoint."""
    idx = 0
    for i, seg in enumerate(profile):
        if seg.t_s <= t:
            idx = i
        else:
            break
    seg = profile[idx]
    if idx > 0 and seg.ramp_s > 0 and t < seg.t_s + seg.ramp_s:
        prev = profile[idx - 1].value
        return prev + (seg.value - prev) * (t - seg.t_s) / seg.ramp_s
    return seg.value


# -- YAML with line tracking ------------------------------------------------


class _LineDict(dict):
    line: int = 0

    def __init__(self):
        super().__init__()
        self.lines: dict[Any, int] = {}


class _LineList(list):
    line: int = 0

    def __init__(self):
        super().__init__()
        self.lines: list[int] = []


class _Loader(yaml.SafeLoader):
    pass


# Accept exponent floats without a dot (``1e-3``), which YAML 1.1 reads as strings.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ScenarioError(f"duplicate key {key!r}", k_node.start_mark.line + 1)
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = k_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LineList()
    out.line = node.start_mark.line + 1
    for item in node.value:
        out.append(loader.construct_object(item, deep=True))
        out.lines.append(item.start_mark.line + 1)
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def _line_of(container, key, default: int | None = None) -> int | None:
    if isinstance(container, _LineDict):
        return container.lines.get(key, container.line)
    if isinstance(container, _LineList) and isinstance(key, int) and key < len(container.lines):
        return container.lines[key]
    return default


def _as_float(v, where: str, line) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {v!r}", line)
    f = float(v)
    if not math.isfinite(f):
        raise ScenarioError(f"{where}: value must be finite", line)
    return f


def _as_int(v, where: str, line) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{where}: expected an integer, got {v!r}", line)
    return int(v)


def _as_bool(v, where: str, line) -> bool:
    if not isinstance(v, bool):
        raise ScenarioError(f"{where}: expected true/false, got {v!r}", line)
    return v


def _convert(value, proto, where: str, line):
    """Convert a YAML value to the type of the dataclass default ``proto``."""
    if isinstance(proto, bool):
        return _as_bool(value, where, line)
    if isinstance(proto, int):
        return _as_int(value, where, line)
    if isinstance(proto, float):
        return _as_float(value, where, line)
    if isinstance(proto, str):
        if not isinstance(value, str):
            raise ScenarioError(f"{where}: expected a string, got {value!r}", line)
        return value
    return value


def _fill(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected a mapping", getattr(data, "line", None))
    proto = cls()
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        line = _line_of(data, key)
        if key not in names:
            raise ScenarioError(f"{where}: unknown key {key!r}", line)
        default = getattr(proto, key)
        if default is None:
            if value is None:
                kwargs[key] = None
            elif key == "output_scale":
                kwargs[key] = _scale_value(value, f"{where}.{key}", line)
            elif key == "max_step":
                kwargs[key] = _as_float(value, f"{where}.{key}", line)
            else:
                kwargs[key] = str(value)
        elif isinstance(default, list):
            kwargs[key] = _number_list(value, f"{where}.{key}", line)
        else:
            kwargs[key] = _convert(value, default, f"{where}.{key}", line)
    return cls(**kwargs)


def _scale_value(value, where, line):
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            out[_as_int(k, where, _line_of(value, k, line))] = _as_float(v, where, _line_of(value, k, line))
        return out
    return _as_float(value, where, line)


def _number_list(value, where, line):
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: expected a list", line)
    out = []
    for i, v in enumerate(value):
        ln = _line_of(value, i, line)
        if isinstance(v, list):
            out.append(_number_list(v, where, ln))
        elif isinstance(v, int) and not isinstance(v, bool):
            out.append(v)
        else:
            out.append(_as_float(v, where, ln))
    return out


def _profile(value, unit_key: str, where: str, line) -> list[Segment]:
    if not isinstance(value, list) or not value:
        raise ScenarioError(f"{where}: expected a non-empty list of segments", line)
    segs = []
    for i, item in enumerate(value):
        ln = _line_of(value, i, line)
        if not isinstance(item, dict):
            raise ScenarioError(f"{where}[{i}]: expected a mapping", ln)
        extra = set(item) - {"t_s", unit_key, "ramp_s"}
        if extra:
            k = sorted(extra, key=str)[0]
            raise ScenarioError(f"{where}[{i}]: unknown key {k!r}", _line_of(item, k, ln))
        for req in ("t_s", unit_key):
            if req not in item:
                raise ScenarioError(f"{where}[{i}]: missing key {req!r}", ln)
        segs.append(Segment(
            _as_float(item["t_s"], f"{where}[{i}].t_s", _line_of(item, "t_s", ln)),
            _as_float(item[unit_key], f"{where}[{i}].{unit_key}", _line_of(item, unit_key, ln)),
            _as_float(item.get("ramp_s", 0.0), f"{where}[{i}].ramp_s", _line_of(item, "ramp_s", ln)),
        ))
    return segs


_DIST_KEYS = {
    "order": "order",
    "amplitude": "amplitude",
    "phase_rad": "phase",
    "amp_per_torque": "amp_per_torque",
    "phase_per_torque_rad": "phase_per_torque",
    "phase_per_krpm_rad": "phase_per_krpm",
}


def _disturbance(value, where, line) -> list[DisturbanceTerm]:
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: expected a list of terms", line)
    terms = []
    for i, item in enumerate(value):
        ln = _line_of(value, i, line)
        if not isinstance(item, dict):
            raise ScenarioError(f"{where}[{i}]: expected a mapping", ln)
        kw = {}
        for k, v in item.items():
            kl = _line_of(item, k, ln)
            if k not in _DIST_KEYS:
                raise ScenarioError(f"{where}[{i}]: unknown key {k!r}", kl)
            kw[_DIST_KEYS[k]] = _as_int(v, f"{where}[{i}].order", kl) if k == "order" else _as_float(v, f"{where}[{i}].{k}", kl)
        if "order" not in kw or "amplitude" not in kw:
            raise ScenarioError(f"{where}[{i}]: 'order' and 'amplitude' are required", ln)
        try:
            terms.append(DisturbanceTerm(**kw))
        except ConfigurationError as exc:
            raise ScenarioError(f"{where}[{i}]: {exc}", ln) from None
    return terms


_SECTIONS = {
    "plant": PlantConfig,
    "nvh": NvhConfig,
    "noise": NoiseConfig,
    "estimator": EstimatorConfig,
    "active_learning": ActiveLearningConfig,
    "quality": QualityConfig,
    "lut": LutConfig,
    "structure": StructureSection,
    "fd": FdSection,
}


def scenario_from_dict(data, source: str | None = None) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("top level must be a mapping", getattr(data, "line", 1), source)
    kwargs: dict[str, Any] = {}
    proto = Scenario()
    try:
        for key, value in data.items():
            line = _line_of(data, key)
            if key in _SECTIONS:
                kwargs[key] = _fill(_SECTIONS[key], value, key)
            elif key == "speed_profile":
                kwargs[key] = _profile(value, "speed_rpm", key, line)
            elif key == "torque_profile":
                kwargs[key] = _profile(value, "torque_pu", key, line)
            elif key == "disturbance":
                kwargs[key] = _disturbance(value, key, line)
            elif key in ("orders", "seeds"):
                if not isinstance(value, list):
                    raise ScenarioError(f"{key}: expected a list of integers", line)
                kwargs[key] = [_as_int(v, key, _line_of(value, i, line)) for i, v in enumerate(value)]
            elif key in ("name", "duration_s", "ts_us", "controller"):
                kwargs[key] = _convert(value, getattr(proto, key), key, line)
            else:
                raise ScenarioError(f"unknown key {key!r}", line)
        sc = Scenario(**kwargs)
        try:
            sc.validate()
        except ConfigurationError as exc:
            raise ScenarioError(str(exc), _first_line(data, str(exc))) from None
    except ScenarioError as exc:
        if source is not None and exc.path is None:
            raise ScenarioError(exc.message, exc.line, source) from None
        raise
    return sc


def _first_line(data, message: str) -> int | None:
    for key in data:
        if isinstance(key, str) and key in message:
            return _line_of(data, key)
    return getattr(data, "line", None)


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    try:
        data = yaml.load(text, Loader=_Loader)
    except ScenarioError as exc:
        raise ScenarioError(exc.message, exc.line, source) from None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ScenarioError(f"YAML syntax error: {exc.problem}", mark.line + 1 if mark else None, source) from None
    return scenario_from_dict(data, source)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(p)) from None
    return parse_scenario(text, str(p))


# -- serialization ----------------------------------------------------------


def _section_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def scenario_to_dict(sc: Scenario) -> dict:
    out: dict[str, Any] = {
        "name": sc.name,
        "duration_s": sc.duration_s,
        "ts_us": sc.ts_us,
        "controller": sc.controller,
        "orders": list(sc.orders),
        "seeds": list(sc.seeds),
        "speed_profile": [{"t_s": s.t_s, "speed_rpm": s.value, "ramp_s": s.ramp_s} for s in sc.speed_profile],
        "torque_profile": [{"t_s": s.t_s, "torque_pu": s.value, "ramp_s": s.ramp_s} for s in sc.torque_profile],
        "disturbance": [
            {
                "order": t.order,
                "amplitude": t.amplitude,
                "phase_rad": t.phase,
                "amp_per_torque": t.amp_per_torque,
                "phase_per_torque_rad": t.phase_per_torque,
                "phase_per_krpm_rad": t.phase_per_krpm,
            }
            for t in sc.disturbance
        ],
    }
    for key in _SECTIONS:
        out[key] = _section_dict(getattr(sc, key))
    return out


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
