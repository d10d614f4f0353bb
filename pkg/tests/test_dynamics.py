import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sphtraffic.dynamics import (ParamError, PhysicsParams, agent_forces, artificial_pi,
                                 control_input, effective_pressure, external_accel,
                                 pair_accelerations, pressure_accel_abridged,
                                 pressure_accel_full, pressure_from_density,
                                 viscosity_accel, viscosity_coeff)
from sphtraffic.sph import find_neighbors, neighbor_pairs, spiky_gradient

from conftest import line_network

H = 1.0


def unit_params(**kw):
    base = dict(h=H, rho_rest=1.0)
    base.update(kw)
    return PhysicsParams(**base)


def test_external_accel_on_thirty_degree_slope(line_net):
    p = PhysicsParams()
    assert external_accel(line_net.segment("s"), p, "X") == pytest.approx(4.905)
    assert external_accel(line_net.segment("s"), p, "X", at_destination=True) == 0.0


def test_external_accel_zero_on_level_ground():
    net = line_network(100.0, 1e-300)
    assert external_accel(net.segment("s"), PhysicsParams(), "X") == pytest.approx(0.0)


@pytest.mark.parametrize("rho,expected", [(3.0, 1.0), (1.0, 0.0), (0.5, -0.25)])
def test_state_equation(rho, expected):
    assert pressure_from_density(rho, unit_params(k=0.5)) == pytest.approx(expected)


def test_rest_density_scales_with_lanes():
    assert pressure_from_density(2.0, unit_params(k=0.5), lanes=2) == 0.0


def test_clipping_removes_only_negative_pressure():
    p = unit_params(k=0.5, pressure_scale=10.0, clip_negative_pressure=True)
    assert effective_pressure(0.5, p) == 0.0
    assert effective_pressure(3.0, p) == pytest.approx(10.0)


def test_viscosity_closed_form_examples():
    mu = viscosity_coeff(1.0, unit_params(a_coef=0.0, b_coef=1.0, gamma=0.7))
    assert mu == pytest.approx(math.e - 0.7) and mu == pytest.approx(2.01828, abs=1e-5)
    assert math.log(math.log(mu + 0.7)) == pytest.approx(0.0, abs=1e-12)
    mu2 = viscosity_coeff(2.0, unit_params(a_coef=0.0, b_coef=2.0, gamma=0.9))
    assert mu2 == pytest.approx(math.exp(4) - 0.9) and mu2 == pytest.approx(53.698, abs=1e-3)


def test_gamma_outside_range_rejected():
    with pytest.raises(ParamError, match=r"gamma: must lie in \[0.6, 0.9\]"):
        PhysicsParams(gamma=0.5)


def _pair(pos, vel=None):
    pos = np.asarray(pos, float)
    nbs = find_neighbors(pos, H)
    vel = np.zeros_like(pos) if vel is None else np.asarray(vel, float)
    return nbs, vel


def test_pressure_accel_empty_neighbourhood():
    nbs, _ = _pair([[0.0, 0.0]])
    assert np.all(pressure_accel_full(0, nbs[0], [1.0], [1.0], [1.0], H) == 0)
    assert np.all(pressure_accel_abridged(0, nbs[0], [1.0], [1.0], [1.0], H) == 0)


def test_equal_pair_pushes_apart_symmetrically():
    nbs, _ = _pair([[0.0, 0.0], [0.5, 0.0]])
    rho, p = [2.0, 2.0], [1.0, 1.0]
    a0 = pressure_accel_full(0, nbs[0], [1.0, 1.0], rho, p, H)
    a1 = pressure_accel_full(1, nbs[1], [1.0, 1.0], rho, p, H)
    np.testing.assert_allclose(a0, -a1)
    assert a0[0] < 0 and a1[0] > 0 and a0[1] == 0.0


def test_abridged_single_neighbour_formula():
    nbs, _ = _pair([[0.0, 0.0], [0.3, 0.4]])
    rho, p = [1.7, 1.9], [0.6, 0.2]
    got = pressure_accel_abridged(0, nbs[0], [1.0, 2.0], rho, p, H)
    want = -(0.6 / 1.7**2) * 2.0 * spiky_gradient(np.array([-0.3, -0.4]), H)
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_viscosity_zero_for_receding_and_static_pairs():
    params = unit_params()
    nbs, vel = _pair([[0.0, 0.0], [0.5, 0.0]], [[-1.0, 0.0], [1.0, 0.0]])
    assert np.all(viscosity_accel(0, nbs[0], [1, 1], [1, 1], vel, params) == 0)
    nbs, vel = _pair([[0.0, 0.0], [0.5, 0.0]])
    assert np.all(viscosity_accel(0, nbs[0], [1, 1], [1, 1], vel, params) == 0)


def test_head_on_viscosity_matches_hand_evaluation():
    params = unit_params(c1=1.0, c2=0.01)
    nbs, vel = _pair([[0.0, 0.0], [0.5 * H, 0.0]], [[1.0, 0.0], [0.0, 0.0]])
    a = viscosity_accel(0, nbs[0], [1.0, 1.0], [1.0, 1.0], vel, params)
    q = np.array([-0.5 * H, 0.0])
    pi = 2.0 * float(np.dot([1.0, 0.0], q)) / (0.25 * H * H + params.eta2)
    assert pi == pytest.approx(artificial_pi(1.0, 1.0, -0.5 * H, 0.25 * H * H, params.eta2))
    want = -(-params.c1 * pi + params.c2 * pi * pi) * spiky_gradient(q, H)
    np.testing.assert_allclose(a, want, rtol=1e-14)
    assert a[0] < 0  # pushed back, away from the agent it approaches


def test_control_input_examples():
    p = PhysicsParams()
    t = np.array([1.0, 0.0])
    z = np.zeros(2)
    assert control_input(0.0, agent_forces(0.0, z, z, t, 0.0, p), p) == 0.0
    assert control_input(2.0, agent_forces(0.0, z, z, t, 2.0, p), p) == pytest.approx(-0.6)
    ext = p.g * math.sin(math.pi / 6)
    assert control_input(0.0, agent_forces(ext, z, z, t, 0.0, p), p) == pytest.approx(4.905)


def test_vectorised_pairs_match_per_agent_forms(rng):
    params = unit_params(c1=1.0)
    pos = rng.uniform(0, 3, (25, 2))
    vel = rng.normal(size=(25, 2))
    mass = rng.uniform(0.5, 2.0, 25)
    nbs = find_neighbors(pos, H)
    i, j, off, dist = neighbor_pairs(pos, H)
    from sphtraffic.sph import density_from_pairs
    rho = density_from_pairs(mass, i, j, dist, H)
    pr = pressure_from_density(rho, params)
    mu = viscosity_coeff(rho, params)
    for form, fn in (("full", pressure_accel_full), ("abridged", pressure_accel_abridged)):
        ap, av = pair_accelerations(mass, rho, pr, mu, vel, i, j, off, dist, params, form)
        for k in range(25):
            np.testing.assert_allclose(ap[k], fn(k, nbs[k], mass, rho, pr, H), atol=1e-12)
            np.testing.assert_allclose(av[k], viscosity_accel(k, nbs[k], mass, mu, vel, params),
                                       atol=1e-12)


@given(st.floats(0.0, 3.0), st.floats(0.1, 3.0), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
def test_viscosity_monotone_in_density(a, b, r1, r2):
    p = PhysicsParams(a_coef=a, b_coef=b)
    lo, hi = sorted((r1, r2))
    # strict below the overflow guard; saturates (non-decreasing) beyond it
    if hi > lo * (1 + 1e-9) and math.exp(a) * hi**b < 700.0:
        assert viscosity_coeff(hi, p) > viscosity_coeff(lo, p)
    assert viscosity_coeff(hi, p) >= viscosity_coeff(lo, p)


@given(arrays(float, (10, 2), elements=st.floats(0, 2)),
       arrays(float, (10, 2), elements=st.floats(-3, 3)))
def test_full_form_conserves_momentum(pos, vel):
    params = unit_params(c1=1.0)
    mass = np.ones(10)
    i, j, off, dist = neighbor_pairs(pos, H)
    from sphtraffic.sph import density_from_pairs
    rho = density_from_pairs(mass, i, j, dist, H)
    ap, av = pair_accelerations(mass, rho, pressure_from_density(rho, params),
                                viscosity_coeff(rho, params), vel, i, j, off, dist,
                                params, "full")
    tot = mass[:, None] * (ap + av)
    scale = np.sum(np.linalg.norm(tot, axis=1))
    assert np.linalg.norm(tot.sum(axis=0)) <= 1e-9 * scale + 1e-300
