"""Smoothing kernels, neighbour search and density summation in 2-D.

Density uses the poly6 kernel, pressure and viscosity use the gradient of
the spiky kernel.  Both have compact support of radius ``h``, which doubles
as the agents' communication range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

COINCIDENT = 1e-9


def _check_h(h: float) -> None:
    if not h > 0:
        raise ValueError(f"smoothing length must be positive, got {h}")


def poly6(r2, h: float):
    """Poly6 density kernel evaluated on squared distances."""
    _check_h(h)
    r2 = np.asarray(r2, dtype=float)
    h2 = h * h
    diff = np.where(r2 < h2, h2 - r2, 0.0)
    return (4.0 / (math.pi * h**8)) * diff**3


def spiky(r, h: float):
    """Spiky kernel value on distances (the family behind ``spiky_gradient``)."""
    _check_h(h)
    r = np.asarray(r, dtype=float)
    diff = np.where(r < h, h - r, 0.0)
    return (10.0 / (math.pi * h**5)) * diff**3


def spiky_gradient(offsets, h: float):
    """Gradient of the spiky kernel with respect to the centre position.

    ``offsets`` are ``q_i - q_j`` with shape (..., 2).  The result points from
    the centre toward the neighbour; it is zero at and beyond the support
    radius and at the exactly coincident point.
    """
    _check_h(h)
    d = np.asarray(offsets, dtype=float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    inside = (r < h) & (r > 0.0)
    safe_r = np.where(inside, r, 1.0)
    mag = np.where(inside, (-30.0 / (math.pi * h**5)) * (h - r) ** 2 / safe_r, 0.0)
    return mag[..., None] * d


def kernel_value(r, h: float) -> float:
    """Density kernel at offset vector ``r``."""
    r = np.asarray(r, dtype=float)
    return float(poly6(np.dot(r, r), h))


def kernel_gradient(r, h: float) -> np.ndarray:
    """Pressure-kernel gradient at offset vector ``r`` (antisymmetric in ``r``)."""
    return spiky_gradient(np.asarray(r, dtype=float), h)


# -- neighbour search -------------------------------------------------------

_HALF_STENCIL = ((0, 0), (1, -1), (1, 0), (1, 1), (0, 1))


def neighbor_pairs(pos: np.ndarray, h: float):
    """All unordered pairs closer than ``h`` using a uniform hash grid.

    Returns ``(i, j, offset, dist)`` with ``i < j`` and ``offset = pos[i] - pos[j]``,
    sorted lexicographically by ``(i, j)``.
    """
    _check_h(h)
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    n = len(pos)
    empty = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 2)), np.empty(0))
    if n < 2:
        return empty
    cell = np.floor(pos / h).astype(np.int64)
    cell -= cell.min(axis=0) - 1
    width = int(cell[:, 1].max()) + 2
    key = cell[:, 0] * width + cell[:, 1]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    ukeys, starts, counts = np.unique(skey, return_index=True, return_counts=True)
    agent_cell = np.searchsorted(ukeys, skey)

    ii, jj = [], []
    for dx, dy in _HALF_STENCIL:
        target = ukeys + dx * width + dy
        loc = np.searchsorted(ukeys, target)
        loc_c = np.minimum(loc, len(ukeys) - 1)
        found = ukeys[loc_c] == target
        nb_start = np.where(found, starts[loc_c], 0)
        nb_count = np.where(found, counts[loc_c], 0)
        reps = nb_count[agent_cell]
        total = int(reps.sum())
        if total == 0:
            continue
        a = np.repeat(np.arange(n), reps)
        first = np.cumsum(reps) - reps
        b = np.repeat(nb_start[agent_cell], reps) + (np.arange(total) - np.repeat(first, reps))
        if dx == 0 and dy == 0:
            keep = b > a
            a, b = a[keep], b[keep]
        ii.append(order[a])
        jj.append(order[b])
    if not ii:
        return empty
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    off = pos[lo] - pos[hi]
    dist = np.sqrt(np.sum(off * off, axis=1))
    keep = dist < h
    lo, hi, off, dist = lo[keep], hi[keep], off[keep], dist[keep]
    srt = np.lexsort((hi, lo))
    return lo[srt], hi[srt], off[srt], dist[srt]


def brute_force_pairs(pos: np.ndarray, h: float):
    """O(N^2) reference for :func:`neighbor_pairs`."""
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    i, j = np.triu_indices(len(pos), k=1)
    off = pos[i] - pos[j]
    dist = np.sqrt(np.sum(off * off, axis=1))
    keep = dist < h
    return i[keep], j[keep], off[keep], dist[keep]


@dataclass(frozen=True)
class Neighborhood:
    center: int
    members: tuple[tuple[int, tuple[float, float], float], ...]

    @property
    def ids(self) -> list[int]:
        return [m[0] for m in self.members]


def neighborhoods_from_pairs(n: int, i, j, off, dist) -> list[Neighborhood]:
    members: list[list] = [[] for _ in range(n)]
    for a, b, o, d in zip(i.tolist(), j.tolist(), off.tolist(), dist.tolist()):
        members[a].append((b, (o[0], o[1]), d))
        members[b].append((a, (-o[0], -o[1]), d))
    return [Neighborhood(k, tuple(sorted(m))) for k, m in enumerate(members)]


def find_neighbors(pos: np.ndarray, h: float) -> list[Neighborhood]:
    """Neighbourhood of every point: all others strictly within ``h``."""
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    return neighborhoods_from_pairs(len(pos), *neighbor_pairs(pos, h))


# -- density ----------------------------------------------------------------

def density_from_pairs(mass: np.ndarray, i, j, dist, h: float) -> np.ndarray:
    """SPH density with self contribution, from an unordered pair list."""
    mass = np.asarray(mass, dtype=float)
    n = len(mass)
    w = poly6(dist * dist, h)
    rho = mass * poly6(0.0, h)
    rho = rho + np.bincount(i, weights=mass[j] * w, minlength=n)
    rho = rho + np.bincount(j, weights=mass[i] * w, minlength=n)
    return rho


def density(mass_i: float, neighborhood: Neighborhood, masses, h: float) -> float:
    """Density of one agent: its own mass at zero offset plus its neighbours."""
    rho = mass_i * float(poly6(0.0, h))
    for j, _, d in neighborhood.members:
        rho += masses[j] * float(poly6(d * d, h))
    return rho
