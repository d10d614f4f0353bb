import math

import pytest

from sphtraffic.config import serialize
from sphtraffic.engine import run
from sphtraffic.network import outgoing_candidates
from sphtraffic.scenarios import (BUILTINS, ROUTE_V_FREE, builtin, cloverleaf, closed_two_route,
                                  flow_capacity, three_route, two_route)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builders_validate_and_are_deterministic(name):
    a, b = builtin(name, seed=4), builtin(name, seed=4)
    assert serialize(a) == serialize(b)
    assert a.network.segments


def test_two_route_layout():
    cfg = two_route()
    net = cfg.network
    assert sorted(s.id for s in net.segments) == ["A", "B", "entry", "exit"]
    assert outgoing_candidates(net, "S", "X") == ["A", "B"]
    assert net.segment("A").length == pytest.approx(1000.0)
    assert net.segment("B").length == pytest.approx(1500.0)
    assert all(net.segment(r).lanes == 1 for r in "AB")
    assert math.asin(net.sin_theta[net.seg_index["A"], 0]) == pytest.approx(math.asin(0.8))


def test_two_route_default_demand_exceeds_one_route():
    cfg = two_route()
    (entry,) = cfg.demand.entries
    cap = flow_capacity(1, ROUTE_V_FREE)
    assert entry.rate == pytest.approx(1.5 * cap)
    assert cap < entry.rate < 2 * cap


def test_three_route_adds_longest_detour():
    net = three_route().network
    assert outgoing_candidates(net, "S", "X") == ["A", "B", "C"]
    assert net.segment("C").length == pytest.approx(2000.0)


def test_zero_demand_gives_empty_metrics():
    res = run(two_route(rate=0.0, duration=30.0))
    m = res.metrics
    assert res.state.spawned == 0
    assert not any(m.columns["agent_count"]) and not any(m.columns["arrived_count"])
    assert m.first_onset() is None


def test_closed_two_route_is_closed_and_equal_mass():
    cfg = closed_two_route(100)
    assert len(cfg.initial_agents) == 100
    assert all(e.rate == 0 for e in cfg.demand.entries)
    assert cfg.arrival_mode == "park" and not cfg.speed_clamp
    st_ = cfg.initial_state()
    assert len(set(st_.mass.tolist())) == 1
    assert min(st_.s) > 0


def test_cloverleaf_main_exit_share_and_mix():
    cfg = cloverleaf()
    assert len(cfg.demand.entries) == 4
    for e in cfg.demand.entries:
        assert e.dest_dist["X0"] == pytest.approx(0.6)
        assert sum(e.dest_dist.values()) == pytest.approx(1.0)
        assert dict(e.class_mix) == pytest.approx({"car": 0.7, "truck": 0.15, "bus": 0.15})
    net = cfg.network
    assert len(net.destinations) == 7


def test_cloverleaf_capacity_arithmetic():
    cfg = cloverleaf()
    net = cfg.network
    main_demand = sum(e.rate * e.dest_dist["X0"] for e in cfg.demand.entries)
    slowest = min(cfg.classes.speed_factor.values())
    lanes = net.segment("inner").lanes
    inner = flow_capacity(lanes, slowest * net.segment("inner").v_free)
    both = inner + flow_capacity(net.segment("outer").lanes,
                                 slowest * net.segment("outer").v_free)
    assert inner < main_demand < both


def test_cloverleaf_bundles_split_the_main_exit():
    net = cloverleaf().network
    assert outgoing_candidates(net, "J", "X0") == ["inner", "outer"]
    si, so = (net.sin_theta[net.seg_index[r], net.dest_index["X0"]] for r in ("inner", "outer"))
    assert si > so > 0
    assert net.segment("outer").length > net.segment("inner").length
