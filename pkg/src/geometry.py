"""Plane geometry of the blockage scenario.

Blockage objects are zero-width arcs that circulate on the Bernoulli lemniscate
``(x² + y²)² = x² − y²`` (unit half-width, centred at the origin). Links are
rectangular pencil beams from the BS to each device; an object blocks the
fraction of the beam cross-section covered by its arc inside the beam strip.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ellipk, ellipkinc

from src import config
from src.errors import ConfigError, DataError

# ds/du = 1 / sqrt(1 + sin²u)  ->  s(u) = F(u | m=-1)
_M = -1.0
_QUARTER = float(ellipk(_M))
LEMNISCATE_LENGTH = 4.0 * _QUARTER


# ────────────────────── Lemniscate ──────────────────────


def lemniscate_point(u):
    """Point(s) of the lemniscate for curve parameter ``u`` (any shape, periodic in 2π).

    Returns an array of shape ``u.shape + (2,)``; u=0 is the apex (1, 0),
    u=π/2 the self-intersection at the origin.
    """
    u = np.asarray(u, dtype=np.float64)
    s = np.sin(u)
    c = np.cos(u)
    den = 1.0 + s * s
    return np.stack([c / den, s * c / den], axis=-1)


def _arc_length(u: np.ndarray) -> np.ndarray:
    # F(φ + kπ | m) = F(φ | m) + 2k·K(m); reduce to |φ| ≤ π/2 before calling scipy
    k = np.round(u / np.pi)
    return 2.0 * k * _QUARTER + ellipkinc(u - k * np.pi, _M)


def _speed(u: np.ndarray) -> np.ndarray:
    s = np.sin(u)
    return 1.0 / np.sqrt(1.0 + s * s)


@dataclass(frozen=True, eq=False)
class ArcTable:
    """Monotone map between loop fraction s ∈ [0, 1) and curve parameter u ∈ [0, 2π)."""

    u_grid: np.ndarray
    s_grid: np.ndarray
    total_length: float = LEMNISCATE_LENGTH

    @property
    def resolution(self) -> int:
        return len(self.u_grid) - 1

    def param_to_fraction(self, u):
        u = np.mod(np.asarray(u, dtype=np.float64), 2.0 * np.pi)
        return _arc_length(u) / self.total_length

    def fraction_to_param(self, s):
        """Inverse of param_to_fraction: table lookup refined by two Newton steps."""
        s = np.mod(np.asarray(s, dtype=np.float64), 1.0)
        u = np.interp(s, self.s_grid, self.u_grid)
        for _ in range(2):
            err = _arc_length(u) - s * self.total_length
            u = u - err / _speed(u)
        return u

    def point_at(self, s):
        return lemniscate_point(self.fraction_to_param(s))


def build_arclength_table(resolution: int = config.ARC_TABLE_RESOLUTION) -> ArcTable:
    if resolution < config.ARC_TABLE_MIN_RESOLUTION:
        raise ConfigError(f"arc table resolution must be >= {config.ARC_TABLE_MIN_RESOLUTION}, got {resolution}")
    u_grid = np.linspace(0.0, 2.0 * np.pi, resolution + 1)
    s_grid = _arc_length(u_grid) / LEMNISCATE_LENGTH
    s_grid[0], s_grid[-1] = 0.0, 1.0
    u_grid.setflags(write=False)
    s_grid.setflags(write=False)
    return ArcTable(u_grid=u_grid, s_grid=s_grid)


@lru_cache(maxsize=4)
def default_arc_table(resolution: int = config.ARC_TABLE_RESOLUTION) -> ArcTable:
    return build_arclength_table(resolution)


# ────────────────────── Object polylines ──────────────────────


def centre_fraction(initial_phase: float, speed: float, slots, slot_seconds: float):
    """Loop fraction of an object's centre at the given slot index(es)."""
    slots = np.asarray(slots, dtype=np.float64)
    return np.mod(initial_phase + (speed * slot_seconds) * slots, 1.0)


def arc_polylines(
    centres,
    arc_length: float,
    table: ArcTable,
    n_points: int = config.POLYLINE_POINTS,
) -> np.ndarray:
    """Polylines of length ``arc_length`` centred at each loop fraction; shape (..., n_points, 2)."""
    centres = np.asarray(centres, dtype=np.float64)
    half = 0.5 * arc_length / table.total_length
    offsets = np.linspace(-half, half, n_points)
    return table.point_at(centres[..., None] + offsets)


def object_polyline(obj, t: int, table: ArcTable, slot_seconds: float, n_points: int = config.POLYLINE_POINTS):
    """Polyline (n_points × 2) of a BlockageObject at slot t."""
    centre = centre_fraction(obj.initial_phase, obj.speed, t, slot_seconds)
    return arc_polylines(centre, obj.arc_length, table, n_points)


# ────────────────────── Beam occlusion ──────────────────────


def _union_length(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Total length of the union of intervals [lo, hi] along the last axis."""
    order = np.argsort(lo, axis=-1, kind="stable")
    lo = np.take_along_axis(lo, order, axis=-1)
    hi = np.take_along_axis(hi, order, axis=-1)
    reach = np.maximum.accumulate(hi, axis=-1)
    prev = np.concatenate([np.full(reach.shape[:-1] + (1,), -np.inf), reach[..., :-1]], axis=-1)
    return np.maximum(0.0, hi - np.maximum(lo, prev)).sum(axis=-1)


def block_fractions(bs, devices, beamwidth: float, polylines) -> np.ndarray:
    """Fraction of each device's beam cross-section covered by each polyline.

    bs: (2,), devices: (K, 2), polylines: (..., P, 2) -> (..., K).

    Every polyline segment is clipped (Liang–Barsky) to the strip
    ``0 <= along <= |device - bs|``, ``|across| <= beamwidth / 2``; the covered
    part of the cross axis is the union of the clipped segments' projections.
    """
    bs = np.asarray(bs, dtype=np.float64)
    devices = np.atleast_2d(np.asarray(devices, dtype=np.float64))
    poly = np.asarray(polylines, dtype=np.float64)

    axis = devices - bs
    dist = np.linalg.norm(axis, axis=-1)  # (K,)
    if np.any(dist == 0.0):
        raise DataError("device coincides with the base station")
    d = axis / dist[:, None]
    n = np.stack([-d[:, 1], d[:, 0]], axis=-1)

    rel = poly - bs  # (..., P, 2)
    # (..., 1, P) x (K, 1) -> (..., K, P)
    along = rel[..., None, :, 0] * d[:, None, 0] + rel[..., None, :, 1] * d[:, None, 1]
    across = rel[..., None, :, 0] * n[:, None, 0] + rel[..., None, :, 1] * n[:, None, 1]

    a0, a1 = along[..., :-1], along[..., 1:]
    c0, c1 = across[..., :-1], across[..., 1:]
    da = a1 - a0
    dc = c1 - c0
    half = 0.5 * beamwidth
    length = dist[:, None]

    u0 = np.zeros_like(a0)
    u1 = np.ones_like(a0)
    keep = np.ones(a0.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p, q in ((-da, a0), (da, length - a0), (-dc, c0 + half), (dc, half - c0)):
            parallel = p == 0.0
            keep &= ~(parallel & (q < 0.0))
            r = q / np.where(parallel, 1.0, p)
            u0 = np.where(~parallel & (p < 0.0), np.maximum(u0, r), u0)
            u1 = np.where(~parallel & (p > 0.0), np.minimum(u1, r), u1)
    keep &= u0 <= u1

    ca = c0 + u0 * dc
    cb = c0 + u1 * dc
    lo = np.where(keep, np.minimum(ca, cb), -half)
    hi = np.where(keep, np.maximum(ca, cb), -half)
    return np.clip(_union_length(lo, hi) / beamwidth, 0.0, 1.0)


def beam_block_fraction(bs, device, beamwidth: float, poly) -> float:
    if beamwidth <= 0:
        raise ConfigError(f"beamwidth must be positive, got {beamwidth}")
    return float(block_fractions(bs, np.asarray(device)[None, :], beamwidth, poly)[0])
