"""Segmented road graph with slope geometry.

Each directed segment is a polyline in the plane.  For every destination the
network carries a table of remaining straight-line advance (``dis_remaining``)
per junction; a segment's advance toward a destination is the drop of that
table across the segment, and its slope is ``arcsin(advance / length)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

THETA_MAX = math.pi / 2 - 1e-6
_ADV_TOL = 1e-9


class NetworkError(ValueError):
    """Raised for a malformed or inconsistent network description."""


@dataclass(frozen=True)
class RoadSegment:
    id: str
    from_node: str
    to_node: str
    length: float
    v_free: float
    lanes: int
    embedding: tuple[tuple[float, float], ...]
    # per destination; only destinations reachable through this segment
    advance: Mapping[str, float] = field(default_factory=dict)
    slope: Mapping[str, float] = field(default_factory=dict)

    def slope_theta(self, dest: str) -> float:
        return self.slope[dest]

    def advance_dis(self, dest: str) -> float:
        return self.advance[dest]


def slope_from_advance(advance: float, length: float) -> float:
    """Elevation angle of a segment, clamped below vertical."""
    if length <= 0:
        raise NetworkError(f"segment length must be positive, got {length}")
    if advance < -_ADV_TOL or advance > length * (1 + 1e-12) + _ADV_TOL:
        raise NetworkError(
            f"advance {advance} outside [0, length={length}] (arcsin domain)")
    ratio = min(max(advance / length, 0.0), 1.0)
    return min(math.asin(ratio), THETA_MAX)


def _polyline_length(pts: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


class RoadNetwork:
    """Immutable road graph.  Build it with :func:`build_network`."""

    def __init__(self, nodes, segments, destinations, dis_remaining):
        self.nodes: dict[str, tuple[float, float]] = dict(nodes)
        self.segments: tuple[RoadSegment, ...] = tuple(segments)
        self.destinations: tuple[str, ...] = tuple(destinations)
        self.dis_remaining: dict[str, dict[str, float]] = {
            d: dict(tab) for d, tab in dis_remaining.items()}

        self.seg_index = {s.id: i for i, s in enumerate(self.segments)}
        self.dest_index = {d: k for k, d in enumerate(self.destinations)}
        self.cache: dict = {}  # memoised lookups; never affects results
        self._outgoing: dict[str, list[RoadSegment]] = {n: [] for n in self.nodes}
        self._incoming: dict[str, list[RoadSegment]] = {n: [] for n in self.nodes}
        for seg in sorted(self.segments, key=lambda s: s.id):
            self._outgoing[seg.from_node].append(seg)
            self._incoming[seg.to_node].append(seg)
        self._build_arrays()

    # -- vectorised views -------------------------------------------------
    def _build_arrays(self) -> None:
        n_seg, n_dest = len(self.segments), len(self.destinations)
        self.seg_length = np.array([s.length for s in self.segments], dtype=float)
        self.seg_vfree = np.array([s.v_free for s in self.segments], dtype=float)
        self.seg_lanes = np.array([s.lanes for s in self.segments], dtype=float)
        self.sin_theta = np.full((n_seg, n_dest), np.nan)
        self.dis_at_end = np.full((n_seg, n_dest), np.nan)
        for i, s in enumerate(self.segments):
            for d, th in s.slope.items():
                k = self.dest_index[d]
                self.sin_theta[i, k] = math.sin(th)
                self.dis_at_end[i, k] = self.dis_remaining[d][s.to_node]
        self.seg_is_dest_end = np.zeros((n_seg, n_dest), dtype=bool)
        for i, s in enumerate(self.segments):
            if s.to_node in self.dest_index:
                self.seg_is_dest_end[i, self.dest_index[s.to_node]] = True

        # flattened polyline legs, keyed by (segment, start arc length)
        leg_seg, leg_s0, leg_len, leg_p0, leg_dir = [], [], [], [], []
        for i, s in enumerate(self.segments):
            pts = np.asarray(s.embedding, dtype=float)
            acc = 0.0
            for a, b in zip(pts[:-1], pts[1:]):
                d = b - a
                ln = float(math.hypot(d[0], d[1]))
                if ln == 0.0:
                    continue
                leg_seg.append(i)
                leg_s0.append(acc)
                leg_len.append(ln)
                leg_p0.append(a)
                leg_dir.append(d / ln)
                acc += ln
        self._leg_seg = np.array(leg_seg, dtype=np.int64)
        self._leg_s0 = np.array(leg_s0)
        self._leg_len = np.array(leg_len)
        self._leg_p0 = np.array(leg_p0).reshape(-1, 2)
        self._leg_dir = np.array(leg_dir).reshape(-1, 2)
        self._key_scale = float(self.seg_length.max() + 1.0) if n_seg else 1.0
        self._leg_key = self._leg_seg * self._key_scale + self._leg_s0

        pts = np.array(list(self.nodes.values()), dtype=float).reshape(-1, 2)
        for s in self.segments:
            pts = np.vstack([pts, np.asarray(s.embedding, dtype=float)])
        self.bbox = (pts.min(axis=0), pts.max(axis=0))

    # -- queries ----------------------------------------------------------
    def segment(self, seg_id: str) -> RoadSegment:
        return self.segments[self.seg_index[seg_id]]

    def outgoing(self, node: str) -> list[RoadSegment]:
        return list(self._outgoing[node])

    def incoming(self, node: str) -> list[RoadSegment]:
        return list(self._incoming[node])

    def entry_nodes(self) -> list[str]:
        return sorted(n for n in self.nodes if not self._incoming[n])

    def embed_many(self, seg_idx: np.ndarray, s: np.ndarray):
        """Positions and unit tangents for arrays of (segment index, arc length)."""
        seg_idx = np.asarray(seg_idx, dtype=np.int64)
        s = np.asarray(s, dtype=float)
        key = seg_idx * self._key_scale + s
        leg = np.searchsorted(self._leg_key, key, side="right") - 1
        leg = np.clip(leg, 0, len(self._leg_seg) - 1)
        # an arc length exactly at a polyline vertex belongs to the later leg,
        # except at the segment end which stays on the last leg
        local = np.minimum(s - self._leg_s0[leg], self._leg_len[leg])
        pos = self._leg_p0[leg] + local[:, None] * self._leg_dir[leg]
        return pos, self._leg_dir[leg]

    def dis_remaining_at(self, node: str, dest: str) -> float:
        return self.dis_remaining[dest][node]


def embed_position(net: RoadNetwork, seg: str, s: float) -> tuple[float, float]:
    """Point at arc length ``s`` along segment ``seg``."""
    segment = net.segment(seg)
    if not (0.0 <= s <= segment.length):
        raise ValueError(f"arc length {s} outside [0, {segment.length}] on {seg}")
    pos, _ = net.embed_many(np.array([net.seg_index[seg]]), np.array([s]))
    return float(pos[0, 0]), float(pos[0, 1])


def outgoing_candidates(net: RoadNetwork, node: str, dest: str) -> list[str]:
    """Outgoing segments at ``node`` that strictly reduce the remaining advance."""
    if node not in net.nodes:
        raise NetworkError(f"unknown node {node!r}")
    if dest not in net.dest_index:
        raise NetworkError(f"{dest!r} is not a destination")
    table = net.dis_remaining[dest]
    if node == dest:
        return []
    here = table.get(node)
    out = []
    if here is not None:
        for seg in net.outgoing(node):
            there = table.get(seg.to_node)
            if there is not None and there < here:
                out.append(seg.id)
    if not out:
        raise NetworkError(f"node {node!r} has no onward segment toward {dest!r}")
    return sorted(out)


def build_network(desc: Mapping) -> RoadNetwork:
    """Validate a network description and derive slopes.

    ``desc`` holds ``nodes`` ({id: [x, y]}), ``segments`` (list of dicts with
    ``id``, ``from``, ``to``, ``v_free``, ``lanes``, optional ``via`` interior
    points and optional ``length`` which must match the polyline),
    ``destinations`` and ``dis_remaining`` ({dest: {node: metres}}).
    """
    nodes = {str(k): (float(v[0]), float(v[1])) for k, v in desc["nodes"].items()}
    destinations = [str(d) for d in desc["destinations"]]
    if not destinations:
        raise NetworkError("network needs at least one destination")
    for d in destinations:
        if d not in nodes:
            raise NetworkError(f"destination {d!r} is not a node")
    tables: dict[str, dict[str, float]] = {}
    for d in destinations:
        raw = desc["dis_remaining"].get(d)
        if raw is None:
            raise NetworkError(f"no dis_remaining table for destination {d!r}")
        tab = {str(n): float(x) for n, x in raw.items()}
        for n, x in tab.items():
            if n not in nodes:
                raise NetworkError(f"dis_remaining[{d}] names unknown node {n!r}")
            if x < 0:
                raise NetworkError(f"dis_remaining[{d}][{n}] = {x} is negative")
        if tab.get(d, 0.0) != 0.0:
            raise NetworkError(f"dis_remaining[{d}][{d}] must be 0")
        tab[d] = 0.0
        tables[d] = tab

    segments = []
    seen = set()
    for raw in desc["segments"]:
        sid = str(raw["id"])
        if sid in seen:
            raise NetworkError(f"duplicate segment id {sid!r}")
        seen.add(sid)
        a, b = str(raw["from"]), str(raw["to"])
        for n in (a, b):
            if n not in nodes:
                raise NetworkError(f"segment {sid} references unknown node {n!r}")
        pts = [nodes[a], *[(float(p[0]), float(p[1])) for p in raw.get("via", [])], nodes[b]]
        length = _polyline_length(np.asarray(pts))
        if length <= 0:
            raise NetworkError(f"segment {sid} has non-positive length")
        if "length" in raw and raw["length"] is not None:
            declared = float(raw["length"])
            if declared <= 0:
                raise NetworkError(f"segment {sid} has non-positive length {declared}")
            if abs(declared - length) > 1e-9 * declared:
                raise NetworkError(
                    f"segment {sid}: declared length {declared} != polyline length {length}")
        v_free = float(raw["v_free"])
        lanes = int(raw.get("lanes", 1))
        if v_free <= 0:
            raise NetworkError(f"segment {sid}: v_free must be positive")
        if lanes < 1:
            raise NetworkError(f"segment {sid}: lanes must be a positive integer")
        advance, slope = {}, {}
        for d, tab in tables.items():
            if a in tab and b in tab:
                adv = tab[a] - tab[b]
                if adv > length * (1 + 1e-12) + _ADV_TOL:
                    raise NetworkError(
                        f"segment {sid}: advance {adv} toward {d} exceeds length {length}")
                if adv < -_ADV_TOL:
                    # backtracking edge for this destination: never a candidate
                    continue
                adv = max(adv, 0.0)
                advance[d] = adv
                slope[d] = slope_from_advance(adv, length)
        segments.append(RoadSegment(
            id=sid, from_node=a, to_node=b, length=length, v_free=v_free,
            lanes=lanes, embedding=tuple(pts), advance=advance, slope=slope))

    net = RoadNetwork(nodes, segments, destinations, tables)
    _check_reachability(net)
    return net


def _check_reachability(net: RoadNetwork) -> None:
    for d in net.destinations:
        for node in net.dis_remaining[d]:
            if node != d:
                try:
                    outgoing_candidates(net, node, d)
                except NetworkError as exc:
                    raise NetworkError(f"destination {d!r} unreachable: {exc}") from None
    for node in net.entry_nodes():
        if not any(node in net.dis_remaining[d] for d in net.destinations):
            raise NetworkError(f"entry node {node!r} reaches no destination")


def route_advance(net: RoadNetwork, path: Sequence[str], dest: str) -> float:
    """Sum of segment advances along a path of segment ids."""
    return float(sum(net.segment(s).advance[dest] for s in path))
