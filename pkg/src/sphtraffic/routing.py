"""Junction route choice and the global potential.

The dynamic policy scores each onward segment by the tangential acceleration
a probe would feel a short way into it, given the current snapshot; the blind
policy only looks at the slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import PhysicsParams, artificial_pi, effective_pressure, viscosity_coeff
from .network import RoadNetwork, outgoing_candidates
from .rng import ROUTE, uniform
from .sph import COINCIDENT, poly6, spiky_gradient
from .state import POLICY_BLIND, SimulationState, derive

KINDS = ("sph", "blind")


@dataclass(frozen=True)
class RoutingPolicy:
    kind: str = "sph"
    probe_offset: float | None = None  # defaults to h / 2
    noncompliance_prob: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"policy kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.noncompliance_prob <= 1.0:
            raise ValueError("noncompliance_prob must lie in [0, 1]")
        if self.probe_offset is not None and not self.probe_offset > 0:
            raise ValueError("probe_offset must be positive")

    def offset(self, h: float) -> float:
        off = 0.5 * h if self.probe_offset is None else self.probe_offset
        if off > h:
            raise ValueError(f"probe_offset {off} exceeds the smoothing length {h}")
        return off


@dataclass(frozen=True)
class PotentialReport:
    phi: np.ndarray
    phi_S: float


def potential_many(net: RoadNetwork, seg, s, dest, g: float) -> np.ndarray:
    """Phi = g (Dis_remaining(to_node) + (L - s) sin(theta)) for agent arrays."""
    seg = np.asarray(seg, dtype=np.int64)
    dest = np.asarray(dest, dtype=np.int64)
    sin = net.sin_theta[seg, dest]
    if np.isnan(sin).any():
        raise ValueError("an agent's destination is unreachable from its segment")
    rem = net.dis_at_end[seg, dest] + (net.seg_length[seg] - np.asarray(s)) * sin
    return g * np.maximum(rem, 0.0)


def potential(agent, net: RoadNetwork, g: float = 9.81) -> float:
    """Potential of one :class:`~sphtraffic.state.Agent`; zero once parked."""
    if agent.parked:
        return 0.0
    seg = net.seg_index[agent.seg]
    dest = net.dest_index[agent.dest]
    return float(potential_many(net, [seg], [agent.s], [dest], g)[0])


def potential_report(state: SimulationState, net: RoadNetwork, g: float) -> PotentialReport:
    if state.n == 0:
        return PotentialReport(np.empty(0), 0.0)
    phi = potential_many(net, state.seg, state.s, state.dest, g)
    phi = np.where(state.parked, 0.0, phi)
    return PotentialReport(phi, float(phi.sum()))


def probe_scores(cands: list[int], state: SimulationState, net: RoadNetwork,
                 params: PhysicsParams, policy: RoutingPolicy, dest: int,
                 probe_mass: float = 1.0, probe_speed: float = 0.0,
                 exclude: int | None = None) -> np.ndarray:
    """Predicted initial control input of a probe on each candidate.

    The probe sits ``probe_offset`` into the candidate, moves along it at
    ``probe_speed`` and carries ``probe_mass`` as its own density
    contribution.  Every neighbour counts toward its density, but only those
    ahead of it along the candidate exert force: traffic behind the probe
    would otherwise reward a candidate for being crowded near its start.
    Agent ``exclude`` (the one deciding) is left out of the neighbour sums.
    """
    h = params.h
    cands = np.asarray(cands, dtype=np.int64)
    s_probe = np.minimum(policy.offset(h), net.seg_length[cands])
    ppos, ptan = net.embed_many(cands, s_probe)
    d = derive(state, net, params)
    live = d.live if exclude is None else d.live[d.live != exclude]
    scores = params.g * net.sin_theta[cands, dest] - params.xi * probe_speed
    if len(live) == 0:
        return scores
    qpos = d.pos[live]
    mass = state.mass[live]
    for c in range(len(cands)):
        off = ppos[c] - qpos
        r2 = np.sum(off * off, axis=1)
        near = r2 < h * h
        if not near.any():
            continue
        off_n, r2_n, m_n = off[near], r2[near], mass[near]
        rho_p = probe_mass * poly6(0.0, h) + np.sum(m_n * poly6(r2_n, h))
        p_p = effective_pressure(rho_p, params, net.seg_lanes[cands[c]])
        # off points from the neighbour to the probe, so ahead means off . t < 0
        far = (r2_n >= COINCIDENT**2) & (off_n @ ptan[c] < 0)
        grad = spiky_gradient(off_n[far], h)
        a = -(p_p / rho_p**2) * np.sum(m_n[far][:, None] * grad, axis=0)
        v_pj = probe_speed * ptan[c] - d.vel[live][near][far]
        vq = np.sum(v_pj * off_n[far], axis=1)
        act = vq < 0
        if act.any():
            mu_p = viscosity_coeff(rho_p, params)
            pi = artificial_pi(mu_p, d.mu[live][near][far][act], vq[act],
                               r2_n[far][act], params.eta2)
            pt = -params.c1 * pi + params.c2 * pi * pi
            a = a - np.sum((m_n[far][act] * pt)[:, None] * grad[act], axis=0)
        scores[c] += float(np.dot(a, ptan[c]))
    return scores

TIE_RTOL = 1e-9  # scores this close count as equal


def _argmax_tiebreak(scores, cands, net: RoadNetwork, dest: int) -> int:
    """Highest score; near-ties go to the smaller remaining distance, then id."""
    scores = np.asarray(scores, dtype=float)
    top = float(scores.max())
    tied = [c for sc, c in zip(scores, cands) if sc >= top - TIE_RTOL * max(1.0, abs(top))]
    return min(tied, key=lambda c: (float(net.dis_at_end[c, dest]), net.segments[c].id))


def candidate_indices(net: RoadNetwork, node: str, dest: int) -> list[int]:
    cache = net.cache.setdefault("candidates", {})
    hit = cache.get((node, dest))
    if hit is None:
        ids = outgoing_candidates(net, node, net.destinations[dest])
        hit = [net.seg_index[s] for s in ids]
        cache[(node, dest)] = hit
    return hit


def choose_segment(k: int, node: str, state: SimulationState, net: RoadNetwork,
                   params: PhysicsParams, policy: RoutingPolicy, seed: int) -> int:
    """Next segment index for agent ``k`` (snapshot index) standing at ``node``.

    The noncompliance coin is drawn per decision from the agent's own counter
    stream, so the outcome is independent of evaluation order.
    """
    dest = int(state.dest[k])
    cands = candidate_indices(net, node, dest)
    if not cands:
        raise ValueError(f"agent {int(state.ids[k])} has no onward segment at {node!r}")
    if len(cands) == 1:
        return cands[0]
    blind = state.policy[k] == POLICY_BLIND
    if not blind and policy.noncompliance_prob > 0.0:
        coin = uniform(seed, ROUTE, int(state.ids[k]), int(state.decisions[k]))
        blind = coin < policy.noncompliance_prob
    if blind:
        scores = params.g * net.sin_theta[cands, dest]
    else:
        scores = probe_scores(cands, state, net, params, policy, dest,
                              probe_mass=float(state.mass[k]),
                              probe_speed=float(state.v[k]), exclude=k)
    return _argmax_tiebreak(scores, cands, net, dest)


def blind_choice(net: RoadNetwork, node: str, dest: str, g: float = 9.81) -> str:
    """Blind-greedy pick at a junction, by segment id."""
    d = net.dest_index[dest]
    cands = candidate_indices(net, node, d)
    scores = g * net.sin_theta[cands, d]
    return net.segments[_argmax_tiebreak(scores, cands, net, d)].id

