"""Time stepping: spawning, force evaluation, integration and junction moves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dynamics import PhysicsParams
from .network import RoadNetwork
from .rng import SPAWN, stream
from .routing import RoutingPolicy, choose_segment
from .state import (CLASS_INDEX, CLASSES, POLICY_NAMES, SimulationState, derive,
                    empty_state)

DIST_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class EntryDemand:
    """Poisson arrivals onto one entry segment."""
    segment: str
    rate: float
    class_mix: Mapping[str, float] = field(default_factory=lambda: {"car": 1.0})
    dest_dist: Mapping[str, float] = field(default_factory=dict)
    start: float = 0.0
    stop: float | None = None

    def validate(self, net: RoadNetwork) -> None:
        if self.segment not in net.seg_index:
            raise ConfigError(f"entry segment {self.segment!r} is not in the network")
        if not self.rate >= 0:
            raise ConfigError(f"entry {self.segment}: rate must be >= 0, got {self.rate}")
        for name, dist in (("class_mix", self.class_mix), ("dest_dist", self.dest_dist)):
            if not dist:
                raise ConfigError(f"entry {self.segment}: {name} is empty")
            if any(p < 0 for p in dist.values()):
                raise ConfigError(f"entry {self.segment}: {name} has a negative share")
            if abs(sum(dist.values()) - 1.0) > DIST_TOL:
                raise ConfigError(f"entry {self.segment}: {name} must sum to 1 "
                                  f"(got {sum(dist.values())!r})")
        for c in self.class_mix:
            if c not in CLASS_INDEX:
                raise ConfigError(f"entry {self.segment}: unknown vehicle class {c!r}")
        seg = net.segment(self.segment)
        for d in self.dest_dist:
            if d not in net.dest_index:
                raise ConfigError(f"entry {self.segment}: {d!r} is not a destination")
            if d not in seg.slope:
                raise ConfigError(f"entry {self.segment}: destination {d!r} unreachable")

    def active(self, t: float) -> bool:
        return self.rate > 0 and t >= self.start and (self.stop is None or t < self.stop)


@dataclass(frozen=True)
class DemandSpec:
    entries: tuple[EntryDemand, ...] = ()

    def validate(self, net: RoadNetwork) -> None:
        for e in self.entries:
            e.validate(net)

    def exhausted(self, t: float) -> bool:
        return all(e.rate == 0 or (e.stop is not None and t >= e.stop) for e in self.entries)


@dataclass(frozen=True)
class VehicleClasses:
    mass: Mapping[str, float] = field(
        default_factory=lambda: {"car": 1.0, "truck": 2.5, "bus": 1.8})
    speed_factor: Mapping[str, float] = field(
        default_factory=lambda: {"car": 1.0, "truck": 0.7, "bus": 0.85})

    def validate(self) -> None:
        for name, tab in (("mass", self.mass), ("speed_factor", self.speed_factor)):
            if set(tab) != set(CLASSES):
                raise ConfigError(f"classes.{name} must give exactly {CLASSES}")
            if any(not x > 0 for x in tab.values()):
                raise ConfigError(f"classes.{name} values must be positive")
        if any(x > 1 for x in self.speed_factor.values()):
            raise ConfigError("classes.speed_factor values must not exceed 1")

    def arrays(self):
        return (np.array([self.mass[c] for c in CLASSES]),
                np.array([self.speed_factor[c] for c in CLASSES]))


@dataclass(frozen=True)
class StepSettings:
    dt: float
    seed: int = 0
    speed_clamp: bool = True
    arrival_mode: str = "sink"      # or "park"
    s_min_gap: float = 7.0
    classes: VehicleClasses = field(default_factory=VehicleClasses)


def max_stable_dt(net: RoadNetwork, params: PhysicsParams) -> float:
    """Largest step keeping per-step displacement within a tenth of h."""
    return 0.1 * params.h / float(net.seg_vfree.max())


def check_dt(dt: float, net: RoadNetwork, params: PhysicsParams) -> None:
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    bound = max_stable_dt(net, params)
    if dt > bound * (1 + 1e-12):
        raise ConfigError(f"dt={dt} violates the stability bound dt <= 0.1*h/v_max = {bound:.6g}")


# -- spawning ----------------------------------------------------------------

def _pick(cum: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cum, u, side="right"), len(cum) - 1))


def draw_arrivals(seed: int, entry: int, step: int, rate: float, dt: float,
                  class_cum: np.ndarray, dest_cum: np.ndarray) -> list[tuple[int, int]]:
    """Poisson(rate dt) arrivals for one entry and step as (class, dest) slots."""
    g = stream(seed, SPAWN, entry, step)
    k = int(g.poisson(rate * dt))
    if k == 0:
        return []
    u = g.random((k, 2))
    return [(_pick(class_cum, a), _pick(dest_cum, b)) for a, b in u]


def _demand_tables(demand: DemandSpec, net: RoadNetwork):
    cache = net.cache.setdefault("demand", {})
    hit = cache.get(id(demand))
    if hit is None or hit[0] is not demand:
        rows = []
        for e in demand.entries:
            cls_idx = np.array([CLASS_INDEX[c] for c in e.class_mix])
            dest_idx = np.array([net.dest_index[d] for d in e.dest_dist])
            rows.append((net.seg_index[e.segment], cls_idx,
                         np.cumsum(list(e.class_mix.values())),
                         dest_idx, np.cumsum(list(e.dest_dist.values()))))
        hit = (demand, rows)
        cache[id(demand)] = hit
    return hit[1]


def spawn(state: SimulationState, demand: DemandSpec, net: RoadNetwork,
          settings: StepSettings, policy_kind: str = "sph") -> SimulationState:
    """Draw new arrivals into per-entry queues and release at most one per entry.

    A queued vehicle enters at s = 0 with v = 0 once no interacting agent on
    the entry segment is closer than ``s_min_gap`` to its start.
    """
    if not demand.entries:
        return state
    tables = _demand_tables(demand, net)
    mass_tab, _ = settings.classes.arrays()
    queues = list(state.queues) if state.queues else [() for _ in demand.entries]
    next_id = state.next_id
    spawned = state.spawned
    new = []
    for e, entry in enumerate(demand.entries):
        seg, cls_idx, cls_cum, dest_idx, dest_cum = tables[e]
        q = queues[e]
        if entry.active(state.t):
            slots = draw_arrivals(settings.seed, e, state.step, entry.rate, settings.dt,
                                  cls_cum, dest_cum)
            if slots:
                q = q + tuple((next_id + k, int(cls_idx[c]), int(dest_idx[d]), state.t)
                              for k, (c, d) in enumerate(slots))
                next_id += len(slots)
                spawned += len(slots)
        if q:
            on_seg = (state.seg == seg) & ~state.parked
            if not np.any(state.s[on_seg] < settings.s_min_gap):
                new.append((q[0], seg))
                q = q[1:]
        queues[e] = q
    if not new:
        return state.replace(queues=tuple(queues), next_id=next_id, spawned=spawned)
    k = len(new)
    cls = np.array([a[1] for a, _ in new], np.int8)
    pol = POLICY_NAMES.index(policy_kind)
    return state.replace(
        ids=np.concatenate([state.ids, [a[0] for a, _ in new]]).astype(np.int64),
        cls=np.concatenate([state.cls, cls]),
        mass=np.concatenate([state.mass, mass_tab[cls]]),
        seg=np.concatenate([state.seg, [s for _, s in new]]).astype(np.int64),
        s=np.concatenate([state.s, np.zeros(k)]),
        v=np.concatenate([state.v, np.zeros(k)]),
        dest=np.concatenate([state.dest, [a[2] for a, _ in new]]).astype(np.int64),
        policy=np.concatenate([state.policy, np.full(k, pol, np.int8)]),
        spawn_time=np.concatenate([state.spawn_time, [a[3] for a, _ in new]]),
        decisions=np.concatenate([state.decisions, np.zeros(k, np.int64)]),
        parked=np.concatenate([state.parked, np.zeros(k, bool)]),
        queues=tuple(queues), next_id=next_id, spawned=spawned)


# -- stepping ----------------------------------------------------------------

def control_inputs(state: SimulationState, net: RoadNetwork,
                   params: PhysicsParams) -> np.ndarray:
    """u_i for every agent of the snapshot (zero for parked agents)."""
    if state.n == 0:
        return np.empty(0)
    d = derive(state, net, params)
    seg, dest = state.seg, state.dest
    at_end = net.seg_is_dest_end[seg, dest] & (state.s >= net.seg_length[seg])
    ext = np.where(at_end, 0.0, params.g * net.sin_theta[seg, dest])
    body = np.sum((d.a_press + d.a_visc) * d.tangent, axis=1)
    u = ext + body - params.xi * state.v
    return np.where(state.parked, 0.0, u)


def step(state: SimulationState, net: RoadNetwork, params: PhysicsParams,
         policy: RoutingPolicy, settings: StepSettings) -> SimulationState:
    """Advance one step with every force read from the old snapshot."""
    dt = settings.dt
    t_new = state.t + dt
    if state.n == 0:
        return state.replace(t=t_new, step=state.step + 1)
    u = control_inputs(state, net, params)
    seg = state.seg
    v = state.v + u * dt
    if settings.speed_clamp:
        _, speed_tab = settings.classes.arrays()
        vmax = net.seg_vfree[seg] * speed_tab[state.cls]
        v = np.clip(v, 0.0, vmax)
    s = state.s + v * dt
    back = s < 0.0
    if back.any():
        # no reversing onto the previous segment
        s = np.where(back, 0.0, s)
        v = np.where(back, 0.0, v)
    parked = state.parked
    s = np.where(parked, state.s, s)
    v = np.where(parked, 0.0, v)

    seg_new = seg.copy()
    decisions = state.decisions.copy()
    park_new = parked.copy()
    leave = np.zeros(state.n, bool)
    crossing = np.flatnonzero(~parked & (s >= net.seg_length[seg]))
    for k in crossing:
        sg = net.segments[seg[k]]
        if net.seg_is_dest_end[seg[k], state.dest[k]]:
            if settings.arrival_mode == "park":
                park_new[k] = True
                s[k] = net.seg_length[seg[k]]
                v[k] = 0.0
            else:
                leave[k] = True
            continue
        nxt = choose_segment(k, sg.to_node, state, net, params, policy, settings.seed)
        decisions[k] += 1
        seg_new[k] = nxt
        s[k] = min(s[k] - net.seg_length[seg[k]], net.seg_length[nxt])

    arrived = state.arrived
    just = np.flatnonzero(leave | (park_new & ~parked))
    if len(just):
        rows = np.column_stack([state.ids[just], state.spawn_time[just],
                                np.full(len(just), t_new), state.dest[just]]).astype(float)
        arrived = arrived.extend(rows)
    keep = ~leave
    return state.replace(
        t=t_new, step=state.step + 1,
        ids=state.ids[keep], cls=state.cls[keep], mass=state.mass[keep],
        seg=seg_new[keep], s=s[keep], v=v[keep], dest=state.dest[keep],
        policy=state.policy[keep], spawn_time=state.spawn_time[keep],
        decisions=decisions[keep], parked=park_new[keep], arrived=arrived)


# -- full runs -----------------------------------------------------------------

@dataclass
class RunResult:
    metrics: "object"
    state: SimulationState
    steps: int


def run(config, observer: Callable[[SimulationState], None] | None = None) -> RunResult:
    """Spawn and step until the duration elapses or a closed run empties.

    ``config`` is a validated :class:`~sphtraffic.config.ScenarioConfig`.
    """
    from .diagnostics import MetricsRecorder

    net = config.network
    params = config.physics
    settings = config.step_settings()
    state = config.initial_state()
    n_steps = int(round(config.duration / config.dt))
    recorder = MetricsRecorder(config, net)
    if n_steps == 0:
        return RunResult(recorder.finish(), state, 0)
    recorder.record(state)
    done = 0
    for _ in range(n_steps):
        state = spawn(state, config.demand, net, settings, config.policy.kind)
        state = step(state, net, params, config.policy, settings)
        done += 1
        recorder.record(state)
        if observer is not None:
            observer(state)
        if (config.demand.exhausted(state.t) and state.queued == 0
                and not np.any(~state.parked)):
            break
    return RunResult(recorder.finish(), state, done)


__all__ = ["ConfigError", "EntryDemand", "DemandSpec", "VehicleClasses", "StepSettings",
           "max_stable_dt", "check_dt", "draw_arrivals", "spawn", "control_inputs",
           "step", "run", "RunResult", "empty_state"]
