"""Canonical scenarios: two and three parallel routes, and a cloverleaf."""

from __future__ import annotations

import math
from dataclasses import replace
from .config import ScenarioConfig
from .diagnostics import CongestionThresholds
from .dynamics import PhysicsParams
from .engine import DemandSpec, EntryDemand, VehicleClasses
from .routing import RoutingPolicy


# Calibrated desk-scale physics.  Raw pressure differences are tiny next to
# gravity, so both repulsion terms are scaled up until approaching vehicles
# brake before they overrun slower traffic ahead.  Below the lane-scaled rest
# density the scaled pressure would turn into strong attraction on multi-lane
# segments, so it is clipped at zero.
W0 = 4.0 / (math.pi * 30.0**2)
CALIBRATED_PHYSICS = dict(pressure_scale=2000.0, c1=2000.0, clip_negative_pressure=True,
                          a_coef=math.log(1.0 / (1.5 * W0)), b_coef=1.0)

# Bottleneck routes move at their limit when uncongested and slow down once
# they hold more vehicles than lanes * L / s_min_gap; thresholds frozen after
# calibration against the two-route and cloverleaf acceptance runs.
CALIBRATED_THRESHOLDS = CongestionThresholds(v_jam_frac=0.85, occ_frac=1.0, window=60.0)

ROUTE_V_FREE = 2.0


def default_physics(**kw) -> PhysicsParams:
    return PhysicsParams(**{**CALIBRATED_PHYSICS, **kw})


def flow_capacity(lanes: int, v_free: float, s_min_gap: float = 7.0) -> float:
    """Vehicles per second a segment passes when packed at ``s_min_gap`` per lane."""
    return lanes * v_free / s_min_gap


def _apex(p, q, length):
    """Apex of an isosceles two-leg polyline from p to q with total ``length``."""
    (x0, y0), (x1, y1) = p, q
    half = 0.5 * math.hypot(x1 - x0, y1 - y0)
    leg = 0.5 * length
    if leg < half:
        raise ValueError("route shorter than the chord between its ends")
    rise = math.sqrt(leg * leg - half * half)
    mx, my = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    nx, ny = -(y1 - y0) / (2 * half), (x1 - x0) / (2 * half)
    return (mx + rise * nx, my + rise * ny)


def parallel_routes(name: str, route_lengths, *, rate: float | None = None, seed: int = 0,
                    policy: str = "sph", noncompliance: float = 0.0,
                    duration: float = 1500.0, dt: float = 0.1,
                    v_free: float = 30.0, route_v_free: float = ROUTE_V_FREE,
                    stub_length: float = 400.0, stub_advance: float = 300.0,
                    route_advance: float = 800.0, physics: PhysicsParams | None = None,
                    congestion: CongestionThresholds | None = None) -> ScenarioConfig:
    """One entry, one exit, and parallel routes of the given lengths between them.

    The split and merge nodes sit ``route_advance`` apart; route k bends to
    alternating sides so the routes separate quickly after the split.  The
    default demand is 1.5 times the flow capacity of a single route.
    """
    if rate is None:
        rate = 1.5 * flow_capacity(1, route_v_free)
    labels = "ABCDEFGH"
    split, merge = (0.0, 0.0), (route_advance, 0.0)
    nodes = {"O": [-stub_length, 0.0], "S": list(split), "M": list(merge),
             "X": [route_advance + stub_length, 0.0]}
    rv = route_v_free
    segments = [{"id": "entry", "from": "O", "to": "S", "v_free": v_free, "lanes": 1}]
    for k, length in enumerate(route_lengths):
        p, q = (split, merge) if k % 2 == 0 else (merge, split)
        apex = _apex(p, q, length)
        segments.append({"id": labels[k], "from": "S", "to": "M", "v_free": rv, "lanes": 1,
                         "via": [list(apex)]})
    segments.append({"id": "exit", "from": "M", "to": "X", "v_free": v_free, "lanes": 1})
    dis = {"X": 0.0, "M": stub_advance}
    dis["S"] = dis["M"] + route_advance
    dis["O"] = dis["S"] + stub_advance
    net = {"nodes": nodes, "segments": segments, "destinations": ["X"],
           "dis_remaining": {"X": dis}}
    routes = [labels[k] for k in range(len(route_lengths))]
    return ScenarioConfig(
        name=name, network_desc=net,
        demand=DemandSpec((EntryDemand("entry", rate, {"car": 1.0}, {"X": 1.0}),)),
        physics=physics or default_physics(),
        policy=RoutingPolicy(kind=policy, noncompliance_prob=noncompliance),
        dt=dt, duration=duration, seed=seed,
        monitors=("entry", *routes, "exit"),
        congestion=congestion or CALIBRATED_THRESHOLDS,
        congestion_segments=("entry", *routes),
        route_sets={r: (r,) for r in routes})


def two_route(**kw) -> ScenarioConfig:
    """Route A: 1000 m with 800 m advance; route B: 1500 m detour, same advance."""
    return parallel_routes("two_route", (1000.0, 1500.0), **kw)


def closed_two_route(n_agents: int = 100, *, seed: int = 0, policy: str = "sph",
                     duration: float = 600.0, **kw) -> ScenarioConfig:
    """Two-route network with no demand and ``n_agents`` equal-mass cars at t = 0.

    Agents are spread evenly over the entry stub and both routes, park on
    arrival and move without the speed clamp, so the run ends at rest.  The
    physics defaults to the unscaled parameter set: with the calibrated
    scaling, the pair energy dropped when an agent parks is large enough to
    register as a rise in V.
    """
    kw.setdefault("physics", PhysicsParams())
    base = two_route(rate=0.0, seed=seed, policy=policy, duration=duration, **kw)
    net = base.network
    segs = ("entry", "A", "B")
    total = sum(net.segment(sg).length for sg in segs)
    agents, left = [], n_agents
    for k, sg in enumerate(segs):
        length = net.segment(sg).length
        n = left if k == len(segs) - 1 else int(round(n_agents * length / total))
        left -= n
        gap = length / n
        agents += [{"seg": sg, "s": (m + 0.5) * gap, "dest": "X"} for m in range(n)]
    return replace(base, name="closed_two_route", initial_agents=tuple(agents),
                   arrival_mode="park", speed_clamp=False)


def three_route(**kw) -> ScenarioConfig:
    """Two-route layout plus a 2000 m route C with the same advance."""
    return parallel_routes("three_route", (1000.0, 1500.0, 2000.0), **kw)


def _polar(radius, deg):
    a = math.radians(deg)
    return [radius * math.cos(a), radius * math.sin(a)]


# (bearing in degrees, is a loop ramp) for the six minor exits.  Rays are at
# least 30 degrees apart and loops bulge only slightly, so distinct roads stay
# more than a smoothing length apart away from the hub.
ENTRY_BEARINGS = (60.0, 120.0, 240.0, 300.0)
MINOR_EXITS = ((-30.0, True), (0.0, False), (30.0, True), (90.0, True), (150.0, False),
               (270.0, True))


def cloverleaf(*, rate: float | None = None, seed: int = 0, policy: str = "sph",
               noncompliance: float = 0.0, duration: float = 1200.0, dt: float = 0.1,
               v_free: float = 30.0, bundle_v_free: float = ROUTE_V_FREE,
               main_share: float = 0.6, physics: PhysicsParams | None = None,
               congestion: CongestionThresholds | None = None) -> ScenarioConfig:
    """Abstract cloverleaf: four approaches into a hub, seven exits.

    Six minor exits leave the hub directly, four of them as loop ramps.  The
    main exit is reached through a core segment that splits into an inner
    bundle (2 lanes, 1000 m) and an outer detour (2 lanes, 1500 m), both
    advancing 800 m before merging onto the exit road.  Platoons move at the
    pace of their slowest member, so bundle capacity is counted at the truck
    speed; by default the main-exit demand is 1.2 times the inner bundle's
    capacity, below that of both bundles together.
    """
    if not 0.0 < main_share <= 1.0:
        raise ValueError("main_share must lie in (0, 1]")
    if rate is None:
        slowest = min(VehicleClasses().speed_factor.values())
        rate = 1.2 * flow_capacity(2, slowest * bundle_v_free) / (4 * main_share)
    entries = [f"in{k}" for k in range(1, 5)]
    nodes = {"H": [0.0, 0.0], "J": [-200.0, 0.0], "K": [-1000.0, 0.0], "X0": [-1200.0, 0.0]}
    segments = []
    for k, deg in enumerate(ENTRY_BEARINGS, start=1):
        nodes[f"O{k}"] = _polar(300.0, deg)
        segments.append({"id": f"in{k}", "from": f"O{k}", "to": "H", "v_free": v_free, "lanes": 1})
    segments += [
        {"id": "core", "from": "H", "to": "J", "v_free": v_free, "lanes": 2},
        {"id": "inner", "from": "J", "to": "K", "v_free": bundle_v_free, "lanes": 2,
         "via": [list(_apex((-200.0, 0.0), (-1000.0, 0.0), 1000.0))]},
        # apex on the opposite side of the inner bundle
        {"id": "outer", "from": "J", "to": "K", "v_free": bundle_v_free, "lanes": 2,
         "via": [list(_apex((-1000.0, 0.0), (-200.0, 0.0), 1500.0))]}]
    segments.append({"id": "main", "from": "K", "to": "X0", "v_free": v_free, "lanes": 2})
    dis = {"X0": {"X0": 0.0, "K": 150.0, "J": 950.0, "H": 1100.0}}
    minor = []
    for k, (deg, loop) in enumerate(MINOR_EXITS, start=1):
        x = f"X{k}"
        nodes[x] = _polar(300.0, deg)
        seg = {"id": f"loop{k}" if loop else f"ramp{k}", "from": "H", "to": x,
               "v_free": v_free, "lanes": 1}
        if loop:
            seg["via"] = [list(_apex((0.0, 0.0), tuple(nodes[x]), 310.0))]
        segments.append(seg)
        dis[x] = {x: 0.0, "H": 250.0}
        minor.append(x)
    for tab in dis.values():
        for k in range(1, 5):
            tab[f"O{k}"] = tab["H"] + 250.0
    dests = ["X0", *minor]
    dest_dist = {"X0": main_share, **{x: (1.0 - main_share) / len(minor) for x in minor}}
    if main_share == 1.0:
        dest_dist = {"X0": 1.0}
    mix = {"car": 0.7, "truck": 0.15, "bus": 0.15}
    net = {"nodes": nodes, "segments": segments, "destinations": dests, "dis_remaining": dis}
    return ScenarioConfig(
        name="cloverleaf", network_desc=net,
        demand=DemandSpec(tuple(EntryDemand(e, rate, mix, dest_dist) for e in entries)),
        physics=physics or default_physics(),
        policy=RoutingPolicy(kind=policy, noncompliance_prob=noncompliance),
        dt=dt, duration=duration, seed=seed,
        monitors=("core", "inner", "outer", "main"),
        congestion=congestion or CALIBRATED_THRESHOLDS,
        congestion_segments=("core", "inner", "outer"),
        route_sets={"inner": ("inner",), "outer": ("outer",)})


BUILTINS = {"two_route": two_route, "three_route": three_route,
            "closed_two_route": closed_two_route, "cloverleaf": cloverleaf}


def builtin(name: str, **kw) -> ScenarioConfig:
    try:
        return BUILTINS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown builtin scenario {name!r}; "
                       f"choose from {sorted(BUILTINS)}") from None


__all__ = ["two_route", "three_route", "closed_two_route", "cloverleaf", "parallel_routes", "builtin", "BUILTINS",
           "flow_capacity", "default_physics", "CALIBRATED_PHYSICS", "CALIBRATED_THRESHOLDS"]
