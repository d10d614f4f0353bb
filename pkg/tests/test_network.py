import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphtraffic.network import (NetworkError, build_network, embed_position,
                                outgoing_candidates, route_advance, slope_from_advance, THETA_MAX)
from sphtraffic.scenarios import cloverleaf, three_route, two_route

from conftest import line_network


def test_slope_from_half_advance():
    net = line_network(100.0, 50.0)
    theta = net.segment("s").slope_theta("X")
    assert theta == pytest.approx(math.pi / 6, abs=1e-12)
    assert theta == math.asin(0.5)


def test_level_segment_has_zero_slope():
    assert slope_from_advance(0.0, 100.0) == 0.0


def test_advance_beyond_length_is_rejected():
    with pytest.raises(NetworkError, match="exceeds length"):
        line_network(100.0, 120.0)


def test_embed_straight_segment(line_net):
    assert embed_position(line_net, "s", 25.0) == pytest.approx((25.0, 0.0))
    assert embed_position(line_net, "s", 0.0) == (0.0, 0.0)


def test_embed_two_leg_polyline():
    net = build_network({
        "nodes": {"A": [0.0, 0.0], "B": [50.0, 50.0]},
        "segments": [{"id": "p", "from": "A", "to": "B", "v_free": 10.0,
                      "via": [[50.0, 0.0]]}],
        "destinations": ["B"],
        "dis_remaining": {"B": {"A": 60.0}},
    })
    assert net.segment("p").length == pytest.approx(100.0)
    assert embed_position(net, "p", 75.0) == pytest.approx((50.0, 25.0))


def test_embed_rejects_out_of_range(line_net):
    with pytest.raises(ValueError):
        embed_position(line_net, "s", 100.5)


def test_declared_length_must_match_polyline():
    desc = {
        "nodes": {"O": [0.0, 0.0], "X": [100.0, 0.0]},
        "segments": [{"id": "s", "from": "O", "to": "X", "v_free": 30.0, "length": 99.0}],
        "destinations": ["X"], "dis_remaining": {"X": {"O": 10.0}},
    }
    with pytest.raises(NetworkError, match="declared length"):
        build_network(desc)


def test_unreachable_destination_is_rejected():
    desc = {
        "nodes": {"O": [0.0, 0.0], "X": [100.0, 0.0], "Y": [0.0, 100.0]},
        "segments": [{"id": "s", "from": "O", "to": "X", "v_free": 30.0}],
        "destinations": ["X", "Y"],
        "dis_remaining": {"X": {"O": 10.0}, "Y": {"O": 50.0}},
    }
    with pytest.raises(NetworkError, match="unreachable"):
        build_network(desc)


def test_two_route_split_candidates_and_slopes():
    net = two_route().network
    assert len(net.segments) == 4
    assert outgoing_candidates(net, "S", "X") == ["A", "B"]
    assert outgoing_candidates(net, "M", "X") == ["exit"]
    ta, tb = net.segment("A").slope_theta("X"), net.segment("B").slope_theta("X")
    assert ta == pytest.approx(math.asin(0.8)) and ta == pytest.approx(0.9273, abs=1e-4)
    assert tb == pytest.approx(math.asin(8 / 15)) and tb == pytest.approx(0.56254, abs=1e-5)
    assert net.segment("A").length == pytest.approx(1000.0)
    assert net.segment("B").length == pytest.approx(1500.0)


def test_three_route_slopes_decrease_with_length():
    net = three_route().network
    cands = outgoing_candidates(net, "S", "X")
    assert cands == ["A", "B", "C"]
    thetas = [net.segment(c).slope_theta("X") for c in cands]
    assert thetas[0] > thetas[1] > thetas[2]


def test_dis_remaining_telescopes_along_routes():
    net = cloverleaf().network
    total = net.dis_remaining["X0"]["O1"]
    for path in (["in1", "core", "inner", "main"], ["in1", "core", "outer", "main"]):
        assert route_advance(net, path, "X0") == pytest.approx(total)


def test_cloverleaf_main_junction_candidates_sorted():
    net = cloverleaf().network
    assert outgoing_candidates(net, "J", "X0") == ["inner", "outer"]
    assert outgoing_candidates(net, "H", "X3") == ["loop3"]


@given(length=st.floats(1.0, 5000.0), frac=st.floats(0.001, 1.0))
def test_slope_is_arcsin_of_advance_ratio(length, frac):
    net = line_network(length, frac * length)
    seg = net.segment("s")
    expect = min(math.asin(min(seg.advance_dis("X") / length, 1.0)), THETA_MAX)
    assert seg.slope_theta("X") == pytest.approx(expect, abs=1e-12)
    assert 0.0 <= seg.slope_theta("X") < math.pi / 2


@given(s=st.floats(0.0, 1.0))
def test_embedding_moves_by_arc_length(s):
    net = two_route().network
    seg = net.segment("B")
    a = np.array(embed_position(net, "B", s * seg.length))
    b = np.array(embed_position(net, "B", min(seg.length, s * seg.length + 1.0)))
    # chord never exceeds arc, and equals it away from the bend
    assert np.linalg.norm(b - a) <= 1.0 + 1e-9
