"""Per-agent accelerations: slope pull, pressure, viscosity and damping.

The per-agent functions take a :class:`~sphtraffic.sph.Neighborhood` and are
meant for inspection and testing.  The engine uses :func:`pair_accelerations`,
which evaluates the same formulas over a flat pair list in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .network import RoadSegment
from .sph import COINCIDENT, Neighborhood, spiky_gradient

_EXP_CAP = 700.0  # keeps exp(exp(a) rho^b) finite


class ParamError(ValueError):
    """A physics parameter is outside its admissible range."""


@dataclass(frozen=True)
class PhysicsParams:
    g: float = 9.81
    k: float = 0.5
    rho_rest: float = 4.0 / (math.pi * 30.0**2)  # isolated unit mass at h = 30
    gamma: float = 0.7
    a_coef: float = 1.0
    b_coef: float = 1.0
    xi: float = 0.3
    h: float = 30.0
    eta2: float | None = None  # defaults to (0.01 h)^2
    c1: float = 1.0
    c2: float = 0.01
    # converts the state-equation pressure into acceleration units
    pressure_scale: float = 1.0
    pressure_form: str = "abridged"
    clip_negative_pressure: bool = False  # drop attraction below rest density

    def __post_init__(self):
        if self.eta2 is None:
            object.__setattr__(self, "eta2", (0.01 * self.h) ** 2)
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ParamError(f"{name}: {msg} (got {getattr(self, name)!r})")

        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ParamError(f"{f.name}: must be finite")
        need(self.g > 0, "g", "must be positive")
        need(0.0 < self.k < 1.0, "k", "must lie in (0, 1)")
        need(self.rho_rest > 0, "rho_rest", "must be positive")
        need(0.6 <= self.gamma <= 0.9, "gamma", "must lie in [0.6, 0.9]")
        need(self.a_coef >= 0, "a_coef", "must be non-negative")
        need(self.b_coef > 0, "b_coef", "must be positive")
        need(self.xi > 0, "xi", "must be positive")
        need(self.h > 0, "h", "must be positive")
        need(self.eta2 > 0, "eta2", "must be positive")
        need(self.c1 >= 0, "c1", "must be non-negative")
        need(self.c2 >= 0, "c2", "must be non-negative")
        need(self.pressure_scale > 0, "pressure_scale", "must be positive")
        need(self.pressure_form in ("abridged", "full"), "pressure_form",
             "must be 'abridged' or 'full'")
        # exp(exp(a) rho^b) > 1 for every rho > 0, so mu + gamma > 1 always;
        # the remaining failure mode is overflow, which viscosity_coeff caps.


# -- single-agent forms -----------------------------------------------------

def external_accel(seg: RoadSegment, params: PhysicsParams, dest: str,
                   at_destination: bool = False) -> float:
    """Tangential slope pull g sin(theta) toward the segment's end node."""
    if at_destination:
        return 0.0
    return params.g * math.sin(seg.slope_theta(dest))


def pressure_from_density(rho, params: PhysicsParams, lanes=1):
    """State equation P = k (rho - rho_rest * lanes); negative values allowed."""
    return params.k * (np.asarray(rho, dtype=float) - params.rho_rest * np.asarray(lanes))


def effective_pressure(rho, params: PhysicsParams, lanes=1):
    """Pressure in acceleration units, as used by every force evaluation."""
    p = params.pressure_scale * pressure_from_density(rho, params, lanes)
    return np.maximum(p, 0.0) if params.clip_negative_pressure else p


def viscosity_coeff(rho, params: PhysicsParams):
    """Closed-form mu from log(log(mu + gamma)) = a - b log(1/rho)."""
    rho = np.asarray(rho, dtype=float)
    inner = np.minimum(math.exp(params.a_coef) * rho**params.b_coef, _EXP_CAP)
    return np.exp(inner) - params.gamma


def _members(nb: Neighborhood):
    if not nb.members:
        return np.empty(0, np.int64), np.empty((0, 2)), np.empty(0)
    ids = np.array([m[0] for m in nb.members], dtype=np.int64)
    off = np.array([m[1] for m in nb.members], dtype=float)
    dist = np.array([m[2] for m in nb.members], dtype=float)
    return ids, off, dist


def pressure_accel_full(i: int, nb: Neighborhood, masses, densities, pressures,
                        h: float) -> np.ndarray:
    """Symmetrised pressure acceleration.

    a_i = -sum_j m_j * (P_i/rho_i^2 + P_j/rho_j^2) / 2 * grad_i W_ij.  The
    pair weight is symmetric, so m_i a_(i<-j) = -m_j a_(j<-i).
    """
    ids, off, dist = _members(nb)
    keep = dist >= COINCIDENT
    ids, off = ids[keep], off[keep]
    if len(ids) == 0:
        return np.zeros(2)
    masses, rho, p = (np.asarray(x, dtype=float) for x in (masses, densities, pressures))
    w = 0.5 * (p[i] / rho[i] ** 2 + p[ids] / rho[ids] ** 2)
    grad = spiky_gradient(off, h)
    return -np.sum((masses[ids] * w)[:, None] * grad, axis=0)


def pressure_accel_abridged(i: int, nb: Neighborhood, masses, densities, pressures,
                            h: float) -> np.ndarray:
    """Abridged pressure acceleration a_i = -(P_i/rho_i^2) sum_j m_j grad_i W_ij."""
    ids, off, dist = _members(nb)
    keep = dist >= COINCIDENT
    ids, off = ids[keep], off[keep]
    if len(ids) == 0:
        return np.zeros(2)
    masses, rho, p = (np.asarray(x, dtype=float) for x in (masses, densities, pressures))
    grad = spiky_gradient(off, h)
    return -(p[i] / rho[i] ** 2) * np.sum(masses[ids][:, None] * grad, axis=0)


def artificial_pi(mu_i, mu_j, vq, r2, eta2):
    """Pair term (mu_i + mu_j) (v_ij . q_ij) / (|q_ij|^2 + eta^2)."""
    return (mu_i + mu_j) * vq / (r2 + eta2)


def viscosity_accel(i: int, nb: Neighborhood, masses, viscosities, velocities,
                    params: PhysicsParams) -> np.ndarray:
    """Artificial viscosity, active only for approaching pairs (v_ij . q_ij < 0)."""
    ids, off, dist = _members(nb)
    keep = dist >= COINCIDENT
    ids, off, dist = ids[keep], off[keep], dist[keep]
    if len(ids) == 0:
        return np.zeros(2)
    masses = np.asarray(masses, dtype=float)
    mu = np.asarray(viscosities, dtype=float)
    vel = np.asarray(velocities, dtype=float).reshape(-1, 2)
    vq = np.sum((vel[i] - vel[ids]) * off, axis=1)
    act = vq < 0
    if not act.any():
        return np.zeros(2)
    ids, off, dist, vq = ids[act], off[act], dist[act], vq[act]
    pi = artificial_pi(mu[i], mu[ids], vq, dist * dist, params.eta2)
    pt = -params.c1 * pi + params.c2 * pi * pi
    grad = spiky_gradient(off, params.h)
    return -np.sum((masses[ids] * pt)[:, None] * grad, axis=0)


@dataclass(frozen=True)
class AgentForces:
    a_external: np.ndarray
    a_pressure: np.ndarray
    a_viscosity: np.ndarray
    a_damping: float
    tangent: np.ndarray

    @property
    def a_total(self) -> float:
        body = self.a_external + self.a_pressure + self.a_viscosity
        return float(np.dot(body, self.tangent)) + self.a_damping


def agent_forces(ext: float, a_press, a_visc, tangent, v: float,
                 params: PhysicsParams) -> AgentForces:
    t = np.asarray(tangent, dtype=float)
    return AgentForces(a_external=ext * t, a_pressure=np.asarray(a_press, dtype=float),
                       a_viscosity=np.asarray(a_visc, dtype=float),
                       a_damping=-params.xi * v, tangent=t)


def control_input(v: float, forces: AgentForces, params: PhysicsParams) -> float:
    """u = tangential(a_ext + a_press + a_visc) - xi v."""
    body = forces.a_external + forces.a_pressure + forces.a_viscosity
    return float(np.dot(body, forces.tangent)) - params.xi * v


# -- vectorised pair evaluation ---------------------------------------------

def pair_accelerations(mass, rho, pressure, mu, vel, i, j, off, dist,
                       params: PhysicsParams, form: str | None = None):
    """Pressure and viscosity accelerations for all agents from a pair list.

    ``i < j`` pairs with ``off = q_i - q_j``.  Returns ``(a_press, a_visc)``,
    each of shape (N, 2).
    """
    form = form or params.pressure_form
    n = len(mass)
    a_p = np.zeros((n, 2))
    a_v = np.zeros((n, 2))
    keep = dist >= COINCIDENT
    if not keep.all():
        i, j, off, dist = i[keep], j[keep], off[keep], dist[keep]
    if len(i) == 0:
        return a_p, a_v
    grad = spiky_gradient(off, params.h)  # grad_i W_ij; grad_j W_ji = -grad
    pr = pressure / (rho * rho)
    if form == "full":
        w = 0.5 * (pr[i] + pr[j])
        ci = -(mass[j] * w)[:, None] * grad
        cj = (mass[i] * w)[:, None] * grad
    elif form == "abridged":
        ci = -(mass[j] * pr[i])[:, None] * grad
        cj = (mass[i] * pr[j])[:, None] * grad
    else:
        raise ValueError(f"unknown pressure form {form!r}")
    a_p[:, 0] = np.bincount(i, ci[:, 0], n) + np.bincount(j, cj[:, 0], n)
    a_p[:, 1] = np.bincount(i, ci[:, 1], n) + np.bincount(j, cj[:, 1], n)

    vq = np.sum((vel[i] - vel[j]) * off, axis=1)
    act = vq < 0
    if act.any():
        ia, ja, ga = i[act], j[act], grad[act]
        pi = artificial_pi(mu[ia], mu[ja], vq[act], dist[act] ** 2, params.eta2)
        pt = -params.c1 * pi + params.c2 * pi * pi
        vi = -(mass[ja] * pt)[:, None] * ga
        vj = (mass[ia] * pt)[:, None] * ga
        a_v[:, 0] = np.bincount(ia, vi[:, 0], n) + np.bincount(ja, vj[:, 0], n)
        a_v[:, 1] = np.bincount(ia, vi[:, 1], n) + np.bincount(ja, vj[:, 1], n)
    return a_p, a_v


def energy_rate_terms(mass, rho, pressure, vel, i, j, off, dist, h: float):
    """Per-agent e_dot_i = 1/2 sum_j m_j (P_i/rho_i^2) v_ij . grad_i W_ij."""
    n = len(mass)
    keep = dist >= COINCIDENT
    i, j, off = i[keep], j[keep], off[keep]
    if len(i) == 0:
        return np.zeros(n)
    grad = spiky_gradient(off, h)
    vg = np.sum((vel[i] - vel[j]) * grad, axis=1)  # symmetric under i <-> j
    pr = pressure / (rho * rho)
    ei = 0.5 * mass[j] * pr[i] * vg
    ej = 0.5 * mass[i] * pr[j] * vg
    return np.bincount(i, ei, n) + np.bincount(j, ej, n)
