"""Immutable simulation snapshot and the SPH fields derived from it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import sph
from .dynamics import PhysicsParams, effective_pressure, pair_accelerations, viscosity_coeff
from .network import RoadNetwork

CLASSES = ("car", "truck", "bus")
CLASS_INDEX = {c: k for k, c in enumerate(CLASSES)}
POLICY_SPH = 0
POLICY_BLIND = 1
POLICY_NAMES = ("sph", "blind")


@dataclass(frozen=True)
class Agent:
    """Read-only view of one vehicle."""
    id: int
    cls: str
    mass: float
    seg: str
    s: float
    v: float
    dest: str
    policy: str
    spawn_time: float
    arrival_time: float | None = None
    parked: bool = False


_ARRAY_FIELDS = ("ids", "cls", "mass", "seg", "s", "v", "dest", "policy",
                 "spawn_time", "decisions", "parked")


@dataclass(frozen=True)
class ArrivedLog:
    """Append-only chain of arrival records (id, spawn_time, arrival_time, dest)."""
    prev: "ArrivedLog | None" = None
    chunk: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    count: int = 0

    def extend(self, rows: np.ndarray) -> "ArrivedLog":
        if len(rows) == 0:
            return self
        return ArrivedLog(self, rows, self.count + len(rows))

    def records(self) -> np.ndarray:
        parts, node = [], self
        while node is not None:
            if len(node.chunk):
                parts.append(node.chunk)
            node = node.prev
        if not parts:
            return np.empty((0, 4))
        return np.vstack(parts[::-1])


@dataclass(frozen=True, eq=False)
class SimulationState:
    """Snapshot of all active agents; arrays are index-aligned and sorted by id.

    ``queues`` holds, per entry, the pending spawns as tuples
    ``(id, class index, dest index, draw time)``.
    """
    t: float
    step: int
    ids: np.ndarray
    cls: np.ndarray
    mass: np.ndarray
    seg: np.ndarray
    s: np.ndarray
    v: np.ndarray
    dest: np.ndarray
    policy: np.ndarray
    spawn_time: np.ndarray
    decisions: np.ndarray
    parked: np.ndarray
    next_id: int = 0
    queues: tuple = ()
    arrived: ArrivedLog = field(default_factory=ArrivedLog)
    spawned: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in _ARRAY_FIELDS:
            arr = getattr(self, name)
            if arr.flags.writeable:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def queued(self) -> int:
        return sum(len(q) for q in self.queues)

    def replace(self, **changes) -> "SimulationState":
        kw = {name: getattr(self, name) for name in
              ("t", "step", *_ARRAY_FIELDS, "next_id", "queues", "arrived", "spawned")}
        kw.update(changes)
        return SimulationState(**kw)

    def agents(self, net: RoadNetwork) -> Iterator[Agent]:
        for k in range(self.n):
            yield Agent(id=int(self.ids[k]), cls=CLASSES[self.cls[k]],
                        mass=float(self.mass[k]), seg=net.segments[self.seg[k]].id,
                        s=float(self.s[k]), v=float(self.v[k]),
                        dest=net.destinations[self.dest[k]],
                        policy=POLICY_NAMES[self.policy[k]],
                        spawn_time=float(self.spawn_time[k]),
                        parked=bool(self.parked[k]))


def empty_state(n_entries: int = 0) -> SimulationState:
    f = np.empty(0)
    i = np.empty(0, np.int64)
    return SimulationState(
        t=0.0, step=0, ids=i, cls=np.empty(0, np.int8), mass=f, seg=i, s=f, v=f,
        dest=i, policy=np.empty(0, np.int8), spawn_time=f, decisions=i,
        parked=np.empty(0, bool), queues=tuple(() for _ in range(n_entries)))


def state_from_agents(net: RoadNetwork, agents: list[dict], t: float = 0.0,
                      n_entries: int = 0, policy: str = "sph",
                      class_mass=None) -> SimulationState:
    """Snapshot from explicit agent dicts (keys: seg, s, dest, optional v, cls, mass)."""
    class_mass = class_mass or {"car": 1.0, "truck": 2.5, "bus": 1.8}
    rows = []
    for k, a in enumerate(agents):
        seg = net.seg_index[a["seg"]]
        length = net.seg_length[seg]
        s = float(a.get("s", 0.0))
        if not 0.0 <= s <= length:
            raise ValueError(f"agent {k}: s={s} outside [0, {length}] on {a['seg']}")
        dest = net.dest_index[a["dest"]]
        if np.isnan(net.sin_theta[seg, dest]):
            raise ValueError(f"agent {k}: {a['dest']} unreachable from {a['seg']}")
        cls = a.get("cls", "car")
        rows.append((k, CLASS_INDEX[cls], float(a.get("mass", class_mass[cls])), seg, s,
                     float(a.get("v", 0.0)), dest))
    st = empty_state(n_entries)
    if not rows:
        return st.replace(t=t)
    cols = list(zip(*rows))
    n = len(rows)
    pol = POLICY_NAMES.index(policy)
    return st.replace(
        t=t, ids=np.array(cols[0], np.int64), cls=np.array(cols[1], np.int8),
        mass=np.array(cols[2], float), seg=np.array(cols[3], np.int64),
        s=np.array(cols[4], float), v=np.array(cols[5], float),
        dest=np.array(cols[6], np.int64), policy=np.full(n, pol, np.int8),
        spawn_time=np.full(n, t), decisions=np.zeros(n, np.int64),
        parked=np.zeros(n, bool), next_id=n, spawned=n)


@dataclass(frozen=True)
class Derived:
    """SPH fields of a snapshot; parked agents are excluded from interactions."""
    pos: np.ndarray
    tangent: np.ndarray
    live: np.ndarray          # indices of interacting agents
    pairs: tuple              # (i, j, off, dist) over all agents' indices
    rho: np.ndarray
    pressure: np.ndarray
    mu: np.ndarray
    vel: np.ndarray           # 2-D velocity vectors
    a_press: np.ndarray
    a_visc: np.ndarray


def derive(state: SimulationState, net: RoadNetwork, params: PhysicsParams) -> Derived:
    """Positions, neighbour pairs, density, pressure, viscosity and pair forces.

    Cached on the snapshot so stepping and diagnostics see identical values.
    """
    key = (id(net), params)
    hit = state._cache.get(key)
    if hit is not None:
        return hit
    n = state.n
    if n:
        pos, tangent = net.embed_many(state.seg, state.s)
    else:
        pos, tangent = np.empty((0, 2)), np.empty((0, 2))
    live = np.flatnonzero(~state.parked)
    i, j, off, dist = sph.neighbor_pairs(pos[live], params.h)
    i, j = live[i], live[j]
    rho = sph.density_from_pairs(state.mass, i, j, dist, params.h)
    lanes = net.seg_lanes[state.seg] if n else np.empty(0)
    pressure = effective_pressure(rho, params, lanes)
    mu = viscosity_coeff(rho, params)
    vel = tangent * state.v[:, None]
    a_p, a_v = pair_accelerations(state.mass, rho, pressure, mu, vel, i, j, off, dist, params)
    out = Derived(pos, tangent, live, (i, j, off, dist), rho, pressure, mu, vel, a_p, a_v)
    state._cache[key] = out
    return out
