"""Scenario configuration: schema, validation and YAML round-tripping.

Every validation failure is reported with its dotted field path and, when the
config came from a file, the line it was read from.  Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from typing import Any, Mapping

import yaml

from .diagnostics import CongestionThresholds
from .dynamics import ParamError, PhysicsParams
from .engine import (ConfigError, DemandSpec, EntryDemand, StepSettings, VehicleClasses,
                     check_dt)
from .network import NetworkError, RoadNetwork, build_network
from .routing import RoutingPolicy
from .rng import MASK64
from .state import SimulationState, empty_state, state_from_agents


class ConfigValidationError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path, self.message, self.line = path, message, line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{path}: {message}")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    network_desc: Mapping[str, Any]
    demand: DemandSpec
    physics: PhysicsParams
    policy: RoutingPolicy
    dt: float
    duration: float
    seed: int = 0
    arrival_mode: str = "sink"
    speed_clamp: bool = True
    s_min_gap: float = 7.0
    classes: VehicleClasses = field(default_factory=VehicleClasses)
    initial_agents: tuple = ()
    monitors: tuple[str, ...] = ()
    congestion: CongestionThresholds = field(default_factory=CongestionThresholds)
    congestion_segments: tuple[str, ...] = ()
    route_sets: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    density_grid: int | None = None
    density_every: float = 1.0

    def __post_init__(self):
        norm = {
            "network_desc": _freeze(_plain(self.network_desc)),
            "initial_agents": tuple(_freeze(_plain(a)) for a in self.initial_agents),
            "monitors": tuple(self.monitors),
            "congestion_segments": tuple(self.congestion_segments),
            "route_sets": {str(k): tuple(v) for k, v in self.route_sets.items()},
        }
        for k, v in norm.items():
            object.__setattr__(self, k, v)
        validate(self)

    @cached_property
    def network(self) -> RoadNetwork:
        return build_network(self.network_desc)

    def step_settings(self) -> StepSettings:
        return StepSettings(dt=self.dt, seed=self.seed, speed_clamp=self.speed_clamp,
                            arrival_mode=self.arrival_mode, s_min_gap=self.s_min_gap,
                            classes=self.classes)

    def initial_state(self) -> SimulationState:
        n_entries = len(self.demand.entries)
        if not self.initial_agents:
            return empty_state(n_entries)
        return state_from_agents(self.network, [dict(a) for a in self.initial_agents],
                                 n_entries=n_entries, policy=self.policy.kind,
                                 class_mass=dict(self.classes.mass))

    def with_overrides(self, **kw) -> "ScenarioConfig":
        """Copy with top-level fields or ``policy``/``physics`` sub-fields changed."""
        pol = {k[7:]: kw.pop(k) for k in list(kw) if k.startswith("policy_")}
        phy = {k[8:]: kw.pop(k) for k in list(kw) if k.startswith("physics_")}
        if pol:
            kw["policy"] = replace(self.policy, **pol)
        if phy:
            kw["physics"] = replace(self.physics, **phy)
        return replace(self, **kw)


def validate(cfg: ScenarioConfig) -> None:
    """Cross-field checks; raises ConfigValidationError naming the field."""
    def fail(path, msg):
        raise ConfigValidationError(path, msg)

    if not cfg.duration >= 0:
        fail("duration", "must be non-negative")
    if not 0 <= int(cfg.seed) <= MASK64:
        fail("seed", "must be an unsigned 64-bit integer")
    if cfg.arrival_mode not in ("sink", "park"):
        fail("arrival_mode", "must be 'sink' or 'park'")
    if not cfg.s_min_gap > 0:
        fail("s_min_gap", "must be positive")
    try:
        net = cfg.network
    except NetworkError as exc:
        fail("network", str(exc))
    except (KeyError, TypeError) as exc:
        fail("network", f"malformed description ({exc})")
    try:
        check_dt(cfg.dt, net, cfg.physics)
    except ConfigError as exc:
        fail("dt", str(exc))
    try:
        cfg.classes.validate()
    except ConfigError as exc:
        fail("classes", str(exc))
    for k, e in enumerate(cfg.demand.entries):
        try:
            e.validate(net)
        except ConfigError as exc:
            fail(f"demand[{k}]", str(exc))
    try:
        cfg.policy.offset(cfg.physics.h)
    except ValueError as exc:
        fail("policy.probe_offset", str(exc))
    for k, a in enumerate(cfg.initial_agents):
        try:
            state_from_agents(net, [dict(a)])
        except (KeyError, ValueError) as exc:
            fail(f"initial_agents[{k}]", str(exc))
    for m in cfg.monitors:
        if m not in net.seg_index:
            fail("monitors", f"unknown segment {m!r}")
    for m in cfg.congestion_segments:
        if m not in cfg.monitors:
            fail("congestion.segments", f"{m!r} must also be monitored")
    try:
        cfg.congestion.validate()
    except ValueError as exc:
        fail("congestion", str(exc))
    seen = {}
    for name, segs in cfg.route_sets.items():
        for s in segs:
            if s not in net.seg_index:
                fail(f"route_sets.{name}", f"unknown segment {s!r}")
            if s in seen:
                fail(f"route_sets.{name}", f"segment {s!r} already in {seen[s]!r}")
            seen[s] = name
    if cfg.density_grid is not None and cfg.density_grid < 4:
        fail("density_grid", "needs at least 4 cells per h")
    if not cfg.density_every > 0:
        fail("density_every", "must be positive")


# -- plain-data conversion ---------------------------------------------------------

_PHYSICS_KEYS = {f.name for f in fields(PhysicsParams)}
_POLICY_KEYS = {"kind", "probe_offset", "noncompliance_prob"}
_TOP_KEYS = {"name", "seed", "dt", "duration", "arrival_mode", "speed_clamp", "s_min_gap",
             "network", "demand", "physics", "policy", "classes", "initial_agents",
             "monitors", "congestion", "route_sets", "density_grid", "density_every"}
_ENTRY_KEYS = {"segment", "rate", "class_mix", "dest_dist", "start", "stop"}
_AGENT_KEYS = {"seg", "s", "dest", "v", "cls", "mass"}
_NET_KEYS = {"nodes", "segments", "destinations", "dis_remaining"}
_SEG_KEYS = {"id", "from", "to", "v_free", "lanes", "via", "length"}


def to_dict(cfg: ScenarioConfig) -> dict:
    """Canonical plain-data form; ``from_dict(to_dict(c)) == c``."""
    phys = asdict(cfg.physics)
    return {
        "name": cfg.name,
        "seed": int(cfg.seed),
        "dt": cfg.dt,
        "duration": cfg.duration,
        "arrival_mode": cfg.arrival_mode,
        "speed_clamp": cfg.speed_clamp,
        "s_min_gap": cfg.s_min_gap,
        "network": _plain(cfg.network_desc),
        "demand": [{"segment": e.segment, "rate": e.rate, "class_mix": dict(e.class_mix),
                    "dest_dist": dict(e.dest_dist), "start": e.start, "stop": e.stop}
                   for e in cfg.demand.entries],
        "physics": phys,
        "policy": {"kind": cfg.policy.kind, "probe_offset": cfg.policy.probe_offset,
                   "noncompliance_prob": cfg.policy.noncompliance_prob},
        "classes": {"mass": dict(cfg.classes.mass),
                    "speed_factor": dict(cfg.classes.speed_factor)},
        "initial_agents": [dict(a) for a in cfg.initial_agents],
        "monitors": list(cfg.monitors),
        "congestion": {"v_jam_frac": cfg.congestion.v_jam_frac,
                       "occ_frac": cfg.congestion.occ_frac,
                       "window": cfg.congestion.window,
                       "segments": list(cfg.congestion_segments)},
        "route_sets": {k: list(v) for k, v in cfg.route_sets.items()},
        "density_grid": cfg.density_grid,
        "density_every": cfg.density_every,
    }


def _plain(x):
    if isinstance(x, Mapping):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _freeze(x):
    if isinstance(x, Mapping):
        return {k: _freeze(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return tuple(_freeze(v) for v in x)
    return x


class _Reader:
    """Typed access into a nested dict with path and line tracking."""

    def __init__(self, lines: Mapping[str, int] | None = None):
        self.lines = lines or {}

    def err(self, path: str, msg: str):
        line = self.lines.get(path)
        while line is None and path:
            path = path.rsplit(".", 1)[0] if "." in path else ""
            line = self.lines.get(path)
        return ConfigValidationError(self._orig, msg, line)

    def fail(self, path: str, msg: str):
        self._orig = path
        return self.err(path, msg)

    def mapping(self, obj, path, allowed):
        if not isinstance(obj, Mapping):
            raise self.fail(path, "expected a mapping")
        for k in obj:
            if k not in allowed:
                raise self.fail(f"{path}.{k}" if path else str(k), "unknown key")
        return obj

    def number(self, obj, key, path, default=None, required=False, integer=False,
               nullable=False):
        p = f"{path}.{key}" if path else key
        if key not in obj:
            if required:
                raise self.fail(p, "required field missing")
            return default
        v = obj[key]
        if v is None and nullable:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.fail(p, f"expected a number, got {v!r}")
        if integer:
            if isinstance(v, float) and not v.is_integer():
                raise self.fail(p, f"expected an integer, got {v!r}")
            return int(v)
        if not math.isfinite(float(v)):
            raise self.fail(p, "must be finite")
        return float(v)

    def string(self, obj, key, path, default=None, required=False, nullable=False):
        p = f"{path}.{key}" if path else key
        if key not in obj:
            if required:
                raise self.fail(p, "required field missing")
            return default
        v = obj[key]
        if v is None and nullable:
            return None
        if not isinstance(v, str):
            raise self.fail(p, f"expected a string, got {v!r}")
        return v

    def boolean(self, obj, key, path, default):
        if key not in obj:
            return default
        v = obj[key]
        if not isinstance(v, bool):
            raise self.fail(f"{path}.{key}" if path else key, f"expected true/false, got {v!r}")
        return v

    def seq(self, obj, key, path, default=()):
        p = f"{path}.{key}" if path else key
        v = obj.get(key, default)
        if v is None:
            return ()
        if not isinstance(v, (list, tuple)):
            raise self.fail(p, "expected a list")
        return v

    def shares(self, obj, path):
        if not isinstance(obj, Mapping) or not obj:
            raise self.fail(path, "expected a non-empty mapping of shares")
        out = {}
        for k, v in obj.items():
            out[str(k)] = self.number(obj, k, path, required=True)
        return out


def from_dict(data: Mapping, lines: Mapping[str, int] | None = None) -> ScenarioConfig:
    """Build and validate a config from plain data; defaults fill missing keys."""
    rd = _Reader(lines)
    rd.mapping(data, "", _TOP_KEYS)

    net = rd.mapping(data.get("network"), "network", _NET_KEYS)
    for key in ("nodes", "segments", "destinations", "dis_remaining"):
        if key not in net:
            raise rd.fail(f"network.{key}", "required field missing")
    for k, seg in enumerate(net["segments"] or ()):
        rd.mapping(seg, f"network.segments[{k}]", _SEG_KEYS)
        for key in ("id", "from", "to", "v_free"):
            if key not in seg:
                raise rd.fail(f"network.segments[{k}].{key}", "required field missing")
        rd.number(seg, "v_free", f"network.segments[{k}]", required=True)
        rd.number(seg, "lanes", f"network.segments[{k}]", integer=True)
        rd.number(seg, "length", f"network.segments[{k}]", nullable=True)

    phys_raw = rd.mapping(data.get("physics", {}), "physics", _PHYSICS_KEYS)
    phys_kw = {}
    for k in phys_raw:
        if k == "pressure_form":
            phys_kw[k] = rd.string(phys_raw, k, "physics")
        elif k == "clip_negative_pressure":
            phys_kw[k] = rd.boolean(phys_raw, k, "physics", False)
        else:
            phys_kw[k] = rd.number(phys_raw, k, "physics", nullable=(k == "eta2"))
    try:
        physics = PhysicsParams(**phys_kw)
    except ParamError as exc:
        name = str(exc).split(":", 1)[0]
        raise rd.fail(f"physics.{name}", str(exc).split(": ", 1)[1]) from None

    pol_raw = rd.mapping(data.get("policy", {}), "policy", _POLICY_KEYS)
    try:
        policy = RoutingPolicy(
            kind=rd.string(pol_raw, "kind", "policy", "sph"),
            probe_offset=rd.number(pol_raw, "probe_offset", "policy", nullable=True),
            noncompliance_prob=rd.number(pol_raw, "noncompliance_prob", "policy", 0.0))
    except ValueError as exc:
        raise rd.fail("policy", str(exc)) from None

    entries = []
    for k, e in enumerate(rd.seq(data, "demand", "")):
        p = f"demand[{k}]"
        rd.mapping(e, p, _ENTRY_KEYS)
        entries.append(EntryDemand(
            segment=rd.string(e, "segment", p, required=True),
            rate=rd.number(e, "rate", p, required=True),
            class_mix=rd.shares(e.get("class_mix", {"car": 1.0}), f"{p}.class_mix"),
            dest_dist=rd.shares(e.get("dest_dist"), f"{p}.dest_dist"),
            start=rd.number(e, "start", p, 0.0),
            stop=rd.number(e, "stop", p, None, nullable=True)))

    cls_raw = rd.mapping(data.get("classes", {}), "classes", {"mass", "speed_factor"})
    dflt = VehicleClasses()
    classes = VehicleClasses(
        mass=rd.shares(cls_raw["mass"], "classes.mass") if "mass" in cls_raw else dflt.mass,
        speed_factor=(rd.shares(cls_raw["speed_factor"], "classes.speed_factor")
                      if "speed_factor" in cls_raw else dflt.speed_factor))

    agents = []
    for k, a in enumerate(rd.seq(data, "initial_agents", "")):
        p = f"initial_agents[{k}]"
        rd.mapping(a, p, _AGENT_KEYS)
        row = {"seg": rd.string(a, "seg", p, required=True),
               "s": rd.number(a, "s", p, 0.0),
               "dest": rd.string(a, "dest", p, required=True)}
        if "v" in a:
            row["v"] = rd.number(a, "v", p)
        if "cls" in a:
            row["cls"] = rd.string(a, "cls", p)
        if "mass" in a:
            row["mass"] = rd.number(a, "mass", p)
        agents.append(row)

    con_raw = rd.mapping(data.get("congestion", {}), "congestion",
                         {"v_jam_frac", "occ_frac", "window", "segments"})
    dc = CongestionThresholds()
    congestion = CongestionThresholds(
        v_jam_frac=rd.number(con_raw, "v_jam_frac", "congestion", dc.v_jam_frac),
        occ_frac=rd.number(con_raw, "occ_frac", "congestion", dc.occ_frac),
        window=rd.number(con_raw, "window", "congestion", dc.window))

    rs_raw = data.get("route_sets", {}) or {}
    if not isinstance(rs_raw, Mapping):
        raise rd.fail("route_sets", "expected a mapping")
    route_sets = {str(k): tuple(str(s) for s in rd.seq(rs_raw, k, "route_sets"))
                  for k in rs_raw}

    try:
        return ScenarioConfig(
            name=rd.string(data, "name", "", "scenario"),
            network_desc=_freeze(_plain(net)),
            demand=DemandSpec(tuple(entries)),
            physics=physics,
            policy=policy,
            dt=rd.number(data, "dt", "", required=True),
            duration=rd.number(data, "duration", "", required=True),
            seed=rd.number(data, "seed", "", 0, integer=True),
            arrival_mode=rd.string(data, "arrival_mode", "", "sink"),
            speed_clamp=rd.boolean(data, "speed_clamp", "", True),
            s_min_gap=rd.number(data, "s_min_gap", "", 7.0),
            classes=classes,
            initial_agents=tuple(_freeze(a) for a in agents),
            monitors=tuple(str(m) for m in rd.seq(data, "monitors", "")),
            congestion=congestion,
            congestion_segments=tuple(str(m) for m in rd.seq(con_raw, "segments",
                                                              "congestion")),
            route_sets=route_sets,
            density_grid=rd.number(data, "density_grid", "", None, integer=True,
                                   nullable=True),
            density_every=rd.number(data, "density_every", "", 1.0))
    except ConfigValidationError as exc:
        raise rd.fail(exc.path, exc.message) from None


# -- YAML ------------------------------------------------------------------------

def _walk(node, path: str, lines: dict) -> Any:
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = yaml.safe_load(yaml.serialize(knode))
            sub = f"{path}.{key}" if path else str(key)
            lines[sub] = knode.start_mark.line + 1
            if key in out:
                raise ConfigValidationError(sub, "duplicate key", lines[sub])
            out[key] = _walk(vnode, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_walk(v, f"{path}[{k}]", lines) for k, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_text(text: str) -> ScenarioConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigValidationError("<document>", f"malformed YAML: {exc}",
                                    mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigValidationError("<document>", "empty config", 1)
    lines: dict[str, int] = {}
    data = _walk(root, "", lines)
    return from_dict(data, lines)


def parse_config(path) -> ScenarioConfig:
    """Read and fully validate a YAML scenario file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_text(text)


class _Dumper(yaml.SafeDumper):
    """Block mappings throughout; short scalar lists such as coordinates inline."""


def _represent_list(dumper, data):
    flow = all(not isinstance(x, (dict, list)) for x in data)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=flow)


_Dumper.add_representer(list, _represent_list)


def serialize(cfg: ScenarioConfig) -> str:
    return yaml.dump(to_dict(cfg), Dumper=_Dumper, sort_keys=False, default_flow_style=False)


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()
