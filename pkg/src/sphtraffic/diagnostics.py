"""Lyapunov monitoring, density rasters, congestion detection and run metrics."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dynamics import PhysicsParams, energy_rate_terms
from .network import RoadNetwork
from .routing import potential_report
from .sph import poly6
from .state import SimulationState, derive

# -- Lyapunov ----------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovSample:
    t: float
    phi_S: float
    kinetic: float
    energy_rate: float

    @property
    def V(self) -> float:
        return self.phi_S + self.energy_rate + self.kinetic


def lyapunov_sample(state: SimulationState, net: RoadNetwork,
                    params: PhysicsParams) -> LyapunovSample:
    """Potential, kinetic and pair-energy-rate terms of one snapshot."""
    if state.n == 0:
        return LyapunovSample(state.t, 0.0, 0.0, 0.0)
    d = derive(state, net, params)
    phi_S = potential_report(state, net, params.g).phi_S
    kinetic = float(0.5 * np.sum(state.v * state.v))
    i, j, off, dist = d.pairs
    e = energy_rate_terms(state.mass, d.rho, d.pressure, d.vel, i, j, off, dist, params.h)
    return LyapunovSample(state.t, phi_S, kinetic, float(e.sum()))


@dataclass(frozen=True)
class DescentReport:
    fraction: float
    max_increase: float
    steps_checked: int
    terminal_max_speed: float | None
    speed_limit: float | None
    passed: bool


def check_descent(t: Sequence[float], V: Sequence[float], eps: float,
                  terminal_max_speed: float | None = None, v_free: float | None = None,
                  transient: float = 10.0, min_fraction: float = 0.99,
                  closed: bool = True) -> DescentReport:
    """Share of steps with V(t+dt) <= V(t) + eps after the transient.

    Passes when that share reaches ``min_fraction`` and, if a terminal speed is
    given, it stays below 1e-3 of ``v_free``.
    """
    if not closed:
        raise ValueError("descent check needs a closed run (no spawning, parked arrivals, "
                         "speed clamp off)")
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    if len(t) != len(V):
        raise ValueError("t and V differ in length")
    sel = np.flatnonzero(t[:-1] >= t[0] + transient) if len(t) > 1 else np.empty(0, int)
    if len(sel) == 0:
        frac, worst = 1.0, 0.0
    else:
        inc = V[sel + 1] - V[sel]
        frac = float(np.mean(inc <= eps))
        worst = float(max(inc.max(), 0.0))
    ok = frac >= min_fraction
    limit = None
    if terminal_max_speed is not None:
        if v_free is None:
            raise ValueError("v_free is needed to judge the terminal speed")
        limit = 1e-3 * v_free
        ok = ok and terminal_max_speed < limit
    return DescentReport(frac, worst, int(len(sel)), terminal_max_speed, limit, ok)


# -- density raster ------------------------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    n_x: int
    n_y: int
    x_min: float
    y_min: float
    cell_size: float
    values: np.ndarray  # shape (n_y, n_x), row-major with y rows

    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_size**2)


def grid_geometry(net: RoadNetwork, h: float, cells_per_h: int):
    """Cell size and extent covering the network bounding box padded by h."""
    if int(cells_per_h) != cells_per_h or cells_per_h < 4:
        raise ValueError(f"density grid needs at least 4 cells per h, got {cells_per_h}")
    cell = h / int(cells_per_h)
    lo, hi = net.bbox
    x0, y0 = lo[0] - h, lo[1] - h
    n_x = int(math.ceil((hi[0] + h - x0) / cell))
    n_y = int(math.ceil((hi[1] + h - y0) / cell))
    return n_x, n_y, x0, y0, cell


def density_map(state: SimulationState, net: RoadNetwork, grid_n: int,
                h: float) -> DensityGrid:
    """SPH density sampled at cell centres; ``grid_n`` is cells per h."""
    n_x, n_y, x0, y0, cell = grid_geometry(net, h, grid_n)
    values = np.zeros(n_y * n_x)
    live = np.flatnonzero(~state.parked) if state.n else np.empty(0, int)
    if len(live):
        pos, _ = net.embed_many(state.seg[live], state.s[live])
        w = int(math.ceil(h / cell)) + 1
        ox, oy = np.meshgrid(np.arange(-w, w + 1), np.arange(-w, w + 1))
        ox, oy = ox.ravel(), oy.ravel()
        cx = np.floor((pos[:, 0] - x0) / cell).astype(np.int64)
        cy = np.floor((pos[:, 1] - y0) / cell).astype(np.int64)
        gx = cx[:, None] + ox[None, :]
        gy = cy[:, None] + oy[None, :]
        dx = x0 + (gx + 0.5) * cell - pos[:, 0:1]
        dy = y0 + (gy + 0.5) * cell - pos[:, 1:2]
        wv = state.mass[live][:, None] * poly6(dx * dx + dy * dy, h)
        ok = (gx >= 0) & (gx < n_x) & (gy >= 0) & (gy < n_y) & (wv > 0)
        values = np.bincount((gy * n_x + gx)[ok], weights=wv[ok], minlength=n_y * n_x)
    return DensityGrid(n_x, n_y, x0, y0, cell, values.reshape(n_y, n_x))


def format_grid(grid: DensityGrid) -> str:
    buf = io.StringIO()
    buf.write(f"{grid.n_x} {grid.n_y} {grid.x_min:.9g} {grid.y_min:.9g} {grid.cell_size:.9g}\n")
    for row in grid.values:
        buf.write(" ".join(f"{x:.9g}" for x in row))
        buf.write("\n")
    return buf.getvalue()


# -- congestion ------------------------------------------------------------------


@dataclass(frozen=True)
class CongestionThresholds:
    v_jam_frac: float = 0.05
    occ_frac: float = 0.8
    window: float = 60.0

    def validate(self) -> None:
        if not 0 < self.v_jam_frac <= 1:
            raise ValueError("v_jam_frac must lie in (0, 1]")
        if not 0 < self.occ_frac <= 1:
            raise ValueError("occ_frac must lie in (0, 1]")
        if not self.window >= 0:
            raise ValueError("window must be non-negative")


@dataclass(frozen=True)
class CongestionReport:
    segment: str
    onset_time: float | None
    thresholds: CongestionThresholds


def segment_capacity(lanes: int, length: float, s_min_gap: float) -> float:
    return lanes * length / s_min_gap


def congestion_onset(t: Sequence[float], occupancy: Sequence[float],
                     mean_speed: Sequence[float], seg: str, capacity: float,
                     v_free: float, thresholds: CongestionThresholds = CongestionThresholds()
                     ) -> CongestionReport:
    """Earliest sample time from which the jam condition holds for a full window.

    Jammed means mean speed below ``v_jam_frac * v_free`` with occupancy at
    least ``occ_frac * capacity``.  Samples with no vehicles never count.
    """
    t = np.asarray(t, dtype=float)
    occ = np.asarray(occupancy, dtype=float)
    spd = np.asarray(mean_speed, dtype=float)
    with np.errstate(invalid="ignore"):
        jam = (occ > 0) & (occ >= thresholds.occ_frac * capacity) & \
              (spd < thresholds.v_jam_frac * v_free)
    onset = None
    k, n = 0, len(t)
    while k < n:
        if not jam[k]:
            k += 1
            continue
        end = k
        while end + 1 < n and jam[end + 1]:
            end += 1
        if t[end] - t[k] >= thresholds.window - 1e-9:
            onset = float(t[k])
            break
        k = end + 1
    return CongestionReport(seg, onset, thresholds)


# -- load balance ----------------------------------------------------------------


def load_balance_index(state: SimulationState, net: RoadNetwork,
                       route_sets: Mapping[str, Sequence[str]]) -> dict[str, float]:
    """Share of interacting agents on each route set; zeros if all are empty."""
    seen: dict[str, str] = {}
    idx = {}
    for name, segs in route_sets.items():
        for s in segs:
            if s in seen:
                raise ValueError(f"segment {s!r} appears in route sets {seen[s]!r} and {name!r}")
            seen[s] = name
        idx[name] = np.array([net.seg_index[s] for s in segs], dtype=np.int64)
    live = ~state.parked if state.n else np.empty(0, bool)
    counts = {name: int(np.count_nonzero(np.isin(state.seg, ix) & live))
              for name, ix in idx.items()}
    total = sum(counts.values())
    return {name: (c / total if total else 0.0) for name, c in counts.items()}


# -- run metrics -----------------------------------------------------------------

BASE_COLUMNS = ("t", "agent_count", "arrived_count", "V", "phi_S", "kinetic", "energy_rate")


@dataclass
class RunMetrics:
    monitors: tuple[str, ...]
    columns: dict[str, np.ndarray]
    route_counts: dict[str, np.ndarray]
    congestion: list[CongestionReport]
    arrivals: np.ndarray                     # rows of (id, spawn_time, arrival_time, dest)
    grids: list[tuple[float, DensityGrid]] = field(default_factory=list)
    terminal_max_speed: float = 0.0
    min_V: float | None = None

    def header(self) -> list[str]:
        cols = list(BASE_COLUMNS)
        for m in self.monitors:
            cols += [f"occupancy:{m}", f"mean_speed:{m}"]
        return cols

    def first_onset(self) -> float | None:
        times = [r.onset_time for r in self.congestion if r.onset_time is not None]
        return min(times) if times else None

    def to_csv(self) -> str:
        cols = self.header()
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        data = [self.columns[c] for c in cols]
        ints = {"agent_count", "arrived_count"} | {c for c in cols if c.startswith("occupancy:")}
        fmts = ["%d" if c in ints else "%.9g" for c in cols]
        for r in range(len(data[0]) if data else 0):
            buf.write(",".join(f % (d[r]) for f, d in zip(fmts, data)))
            buf.write("\n")
        return buf.getvalue()

    def route_fractions(self) -> dict[str, np.ndarray]:
        if not self.route_counts:
            return {}
        tot = sum(self.route_counts.values()).astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return {k: np.where(tot > 0, c / tot, np.nan) for k, c in self.route_counts.items()}


class MetricsRecorder:
    """Collects one metrics row per recorded snapshot."""

    def __init__(self, config, net: RoadNetwork):
        self.config = config
        self.net = net
        self.params = config.physics
        self.mon_idx = np.array([net.seg_index[m] for m in config.monitors], dtype=np.int64)
        self.rows: dict[str, list] = {c: [] for c in BASE_COLUMNS}
        self.occ: list[np.ndarray] = []
        self.spd: list[np.ndarray] = []
        self.routes = {name: np.array([net.seg_index[s] for s in segs], dtype=np.int64)
                       for name, segs in config.route_sets.items()}
        self.route_rows: dict[str, list] = {name: [] for name in self.routes}
        self.grids: list = []
        self.grid_every = None
        if config.density_grid is not None:
            self.grid_every = max(1, int(round(config.density_every / config.dt)))
        self.last = None

    def record(self, state: SimulationState) -> None:
        lyap = lyapunov_sample(state, self.net, self.params)
        live = ~state.parked
        r = self.rows
        r["t"].append(state.t)
        r["agent_count"].append(int(np.count_nonzero(live)))
        r["arrived_count"].append(state.arrived.count)
        r["V"].append(lyap.V)
        r["phi_S"].append(lyap.phi_S)
        r["kinetic"].append(lyap.kinetic)
        r["energy_rate"].append(lyap.energy_rate)
        n_seg = len(self.net.segments)
        seg_l = state.seg[live]
        cnt = np.bincount(seg_l, minlength=n_seg)
        vsum = np.bincount(seg_l, weights=state.v[live], minlength=n_seg)
        occ = cnt[self.mon_idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            spd = np.where(occ > 0, vsum[self.mon_idx] / np.maximum(occ, 1), np.nan)
        self.occ.append(occ)
        self.spd.append(spd)
        for name, ix in self.routes.items():
            self.route_rows[name].append(int(cnt[ix].sum()))
        if self.grid_every is not None and state.step % self.grid_every == 0:
            self.grids.append((state.t, density_map(state, self.net, self.config.density_grid,
                                                    self.params.h)))
        self.last = state

    def finish(self) -> RunMetrics:
        cols = {c: np.asarray(v, dtype=float) for c, v in self.rows.items()}
        occ = np.array(self.occ).reshape(-1, len(self.mon_idx))
        spd = np.array(self.spd).reshape(-1, len(self.mon_idx))
        mons = tuple(self.config.monitors)
        for k, m in enumerate(mons):
            cols[f"occupancy:{m}"] = occ[:, k]
            cols[f"mean_speed:{m}"] = spd[:, k]
        reports = []
        thr = self.config.congestion
        for m in self.config.congestion_segments:
            k = mons.index(m)
            seg = self.net.segment(m)
            cap = segment_capacity(seg.lanes, seg.length, self.config.s_min_gap)
            reports.append(congestion_onset(cols["t"], occ[:, k], spd[:, k], m, cap,
                                            seg.v_free, thr))
        st = self.last
        term = float(np.max(np.abs(st.v))) if st is not None and st.n else 0.0
        arrivals = st.arrived.records() if st is not None else np.empty((0, 4))
        return RunMetrics(
            monitors=mons, columns=cols,
            route_counts={k: np.asarray(v) for k, v in self.route_rows.items()},
            congestion=reports, arrivals=arrivals, grids=self.grids,
            terminal_max_speed=term,
            min_V=float(cols["V"].min()) if len(cols["V"]) else None)
