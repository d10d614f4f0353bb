import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphtraffic.dynamics import PhysicsParams
from sphtraffic.network import build_network
from sphtraffic.routing import (RoutingPolicy, blind_choice, choose_segment, potential,
                                potential_many, potential_report, probe_scores)
from sphtraffic.scenarios import three_route
from sphtraffic.sph import poly6
from sphtraffic.state import state_from_agents

from conftest import line_network


def twin_network():
    """Stub into S, then two mirror-image candidates P and Q to X."""
    return build_network({
        "nodes": {"O": [-100.0, 0.0], "S": [0.0, 0.0], "X": [400.0, 0.0]},
        "segments": [
            {"id": "in", "from": "O", "to": "S", "v_free": 30.0},
            {"id": "P", "from": "S", "to": "X", "v_free": 30.0, "via": [[200.0, 150.0]]},
            {"id": "Q", "from": "S", "to": "X", "v_free": 30.0, "via": [[200.0, -150.0]]},
        ],
        "destinations": ["X"],
        "dis_remaining": {"X": {"O": 450.0, "S": 400.0}},
    })


def test_potential_at_segment_entry(line_net):
    st_ = state_from_agents(line_net, [{"seg": "s", "s": 0.0, "dest": "X"}])
    agent = next(st_.agents(line_net))
    assert potential(agent, line_net, 9.81) == pytest.approx(490.5)


def test_potential_zero_at_destination(line_net):
    st_ = state_from_agents(line_net, [{"seg": "s", "s": 100.0, "dest": "X"}])
    assert potential_report(st_, line_net, 9.81).phi_S == pytest.approx(0.0)
    parked = st_.replace(parked=np.array([True]))
    assert potential(next(parked.agents(line_net)), line_net) == 0.0


@given(st.floats(0.0, 99.0), st.floats(0.001, 1.0))
def test_potential_decreases_along_segment(s, ds):
    net = line_network(100.0, 50.0)
    a, b = potential_many(net, [0, 0], [s, s + ds], [0, 0], 9.81)
    assert b < a


def test_empty_candidates_score_slope_pull():
    net = three_route().network
    p = PhysicsParams()
    st_ = state_from_agents(net, [])
    cands = [net.seg_index[c] for c in ("A", "B", "C")]
    sc = probe_scores(cands, st_, net, p, RoutingPolicy(), net.dest_index["X"])
    np.testing.assert_allclose(sc, p.g * net.sin_theta[cands, 0])
    assert blind_choice(net, "S", "X") == "A"


def test_loaded_candidate_scores_lower():
    net = twin_network()
    p = PhysicsParams()
    agents = [{"seg": "Q", "s": 3.0 * k, "dest": "X"} for k in range(20)]
    st_ = state_from_agents(net, agents)
    cands = [net.seg_index["P"], net.seg_index["Q"]]
    sc = probe_scores(cands, st_, net, p, RoutingPolicy(), 0)
    assert sc[0] > sc[1]
    assert sc[0] == pytest.approx(p.g * net.sin_theta[cands[0], 0])


def test_probe_at_rest_density_scores_slope_exactly():
    net = twin_network()
    pol = RoutingPolicy()
    off = pol.offset(30.0)
    gap = 10.0
    rho_p = float(poly6(0.0, 30.0) + poly6(gap * gap, 30.0))
    p = PhysicsParams(rho_rest=rho_p)
    # one agent just ahead of the probe, pulling away
    st_ = state_from_agents(net, [{"seg": "P", "s": off + gap, "dest": "X", "v": 5.0}])
    ip = net.seg_index["P"]
    sc = probe_scores([ip], st_, net, p, pol, 0)
    assert sc[0] == pytest.approx(p.g * net.sin_theta[ip, 0], abs=1e-12)


def _decider(net, extra=()):
    agents = [{"seg": "in", "s": net.segment("in").length, "dest": "X"}, *extra]
    return state_from_agents(net, agents)


def test_choose_segment_avoids_loaded_route():
    net = twin_network()
    st_ = _decider(net, [{"seg": "P", "s": 3.0 * k, "dest": "X"} for k in range(20)])
    k = choose_segment(0, "S", st_, net, PhysicsParams(), RoutingPolicy(), seed=1)
    assert net.segments[k].id == "Q"


@pytest.mark.parametrize("seed", [0, 1, 7, 2**63])
def test_full_noncompliance_is_blind(seed):
    net = twin_network()
    # load the route a blind driver would take (equal slopes: tie-break to P)
    st_ = _decider(net, [{"seg": "P", "s": 3.0 * k, "dest": "X"} for k in range(20)])
    pol = RoutingPolicy(noncompliance_prob=1.0)
    k = choose_segment(0, "S", st_, net, PhysicsParams(), pol, seed)
    assert net.segments[k].id == blind_choice(net, "S", "X") == "P"


def test_equal_scores_prefer_smaller_remaining_distance():
    net = build_network({
        "nodes": {"O": [-100.0, 0.0], "S": [0.0, 0.0], "P1": [100.0, 50.0],
                  "P2": [200.0, -100.0], "X": [400.0, 0.0]},
        "segments": [
            {"id": "in", "from": "O", "to": "S", "v_free": 30.0},
            {"id": "a", "from": "S", "to": "P1", "v_free": 30.0, "length": None},
            {"id": "b", "from": "S", "to": "P2", "v_free": 30.0},
            {"id": "a2", "from": "P1", "to": "X", "v_free": 30.0},
            {"id": "b2", "from": "P2", "to": "X", "v_free": 30.0},
        ],
        "destinations": ["X"],
        "dis_remaining": {"X": {"O": 300.0, "S": 250.0,
                                "P1": 250.0 - 0.5 * math.hypot(100, 50),
                                "P2": 250.0 - 0.5 * math.hypot(200, 100)}},
    })
    ia, ib = net.seg_index["a"], net.seg_index["b"]
    assert net.sin_theta[ia, 0] == pytest.approx(net.sin_theta[ib, 0])
    st_ = _decider(net)
    k = choose_segment(0, "S", st_, net, PhysicsParams(), RoutingPolicy(), seed=3)
    assert net.segments[k].id == "b"


def test_noncompliance_coin_is_reproducible():
    net = twin_network()
    st_ = _decider(net, [{"seg": "P", "s": 3.0 * k, "dest": "X"} for k in range(20)])
    pol = RoutingPolicy(noncompliance_prob=0.5)
    picks = [choose_segment(0, "S", st_, net, PhysicsParams(), pol, seed) for seed in range(40)]
    again = [choose_segment(0, "S", st_, net, PhysicsParams(), pol, seed) for seed in range(40)]
    assert picks == again
    assert len(set(picks)) == 2


def test_policy_validation():
    with pytest.raises(ValueError):
        RoutingPolicy(kind="greedy")
    with pytest.raises(ValueError):
        RoutingPolicy(noncompliance_prob=1.5)
    with pytest.raises(ValueError):
        RoutingPolicy(probe_offset=40.0).offset(30.0)
