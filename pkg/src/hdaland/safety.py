"""Landing-site safety maps from slope and roughness under a rotating footpad pattern.

For every pixel the lander footprint is tried at ``n_o`` orientations in
``[0, pi)``.  Pad heights are bilinear samples of the DEM, the landing plane
is the least-squares plane through the pads, slope is that plane's tilt and
roughness the largest terrain-to-plane gap inside the footprint disc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .terrain import Dem

_SNAP = 1e-9


class BoundaryError(ValueError):
    """Footprint extends past the DEM edge."""


@dataclass(frozen=True)
class LanderGeometry:
    base_diameter: float = 4.0
    pad_count: int = 4
    orientation_count: int = 8

    def __post_init__(self):
        if self.pad_count < 3 or self.orientation_count < 1 or self.base_diameter <= 0:
            raise ValueError(f"invalid lander geometry {self}")

    @property
    def radius(self) -> float:
        return 0.5 * self.base_diameter

    def orientations(self) -> np.ndarray:
        return np.arange(self.orientation_count) * (math.pi / self.orientation_count)


@dataclass(frozen=True)
class SafetyThresholds:
    slope_max: float = 10.0  # deg
    roughness_max: float = 0.3  # m

    def __post_init__(self):
        if self.slope_max <= 0 or self.roughness_max <= 0:
            raise ValueError("thresholds must be positive")


@dataclass
class SafetyMaps:
    v_d: np.ndarray
    v_p: np.ndarray

    @property
    def shape(self):
        return self.v_d.shape

    def hazard_fraction(self) -> float:
        return float(np.mean(self.v_d == 0))


def _snap(values):
    rounded = np.round(values)
    return np.where(np.abs(values - rounded) < _SNAP, rounded, values)


def pad_offsets(geom: LanderGeometry, orientation: float, resolution: float):
    """Pad positions relative to the footprint centre.

    Returns:
        (dx, dy) in metres and (drow, dcol) in pixels, each of length pad_count.
    """
    phi = orientation + 2.0 * math.pi * np.arange(geom.pad_count) / geom.pad_count
    dx = geom.radius * np.cos(phi)
    dy = geom.radius * np.sin(phi)
    return dx, dy, _snap(dy / resolution), _snap(dx / resolution)


def footprint_margin(geom: LanderGeometry, resolution: float) -> int:
    """Width in pixels of the border band where the footprint leaves the grid."""
    return int(math.ceil(geom.radius / resolution - _SNAP))


def disc_offsets(geom: LanderGeometry, resolution: float):
    """Integer (drow, dcol) offsets of pixels whose centres lie in the footprint disc."""
    m = footprint_margin(geom, resolution)
    ii, jj = np.mgrid[-m:m + 1, -m:m + 1]
    inside = (ii**2 + jj**2) * resolution**2 <= geom.radius**2 + _SNAP
    return ii[inside], jj[inside]


def _check_interior(dem: Dem, pixel, geom: LanderGeometry):
    m = footprint_margin(geom, dem.resolution)
    row, col = pixel
    if not (m <= row < dem.rows - m and m <= col < dem.cols - m):
        raise BoundaryError(f"footprint at {pixel} leaves the {dem.rows}x{dem.cols} grid")


def _bilinear(h, r, c):
    r0, c0 = int(math.floor(r)), int(math.floor(c))
    fr, fc = r - r0, c - c0
    val = (1 - fr) * (1 - fc) * h[r0, c0]
    if fc:
        val += (1 - fr) * fc * h[r0, c0 + 1]
    if fr:
        val += fr * (1 - fc) * h[r0 + 1, c0]
        if fc:
            val += fr * fc * h[r0 + 1, c0 + 1]
    return val


def _plane(dx, dy, z, radius):
    # Closed-form least squares for pads equally spaced on a circle.
    n = len(z)
    denom = 0.5 * n * radius**2
    return np.mean(z), np.dot(dx, z) / denom, np.dot(dy, z) / denom


def _pad_plane(dem, pixel, orientation, geom):
    dx, dy, dr, dc = pad_offsets(geom, orientation, dem.resolution)
    row, col = pixel
    z = np.array([_bilinear(dem.heights, row + a, col + b) for a, b in zip(dr, dc)])
    return _plane(dx, dy, z, geom.radius)


def worst_case_slope(dem: Dem, pixel, geom: LanderGeometry) -> float:
    """Largest landing-plane tilt over all footpad orientations, in degrees."""
    _check_interior(dem, pixel, geom)
    worst = 0.0
    for theta in geom.orientations():
        _, gx, gy = _pad_plane(dem, pixel, theta, geom)
        worst = max(worst, math.degrees(math.atan(math.hypot(gx, gy))))
    return worst


def roughness(dem: Dem, pixel, orientation: float, geom: LanderGeometry) -> float:
    """Largest |terrain - landing plane| over the footprint disc for one orientation."""
    _check_interior(dem, pixel, geom)
    a, gx, gy = _pad_plane(dem, pixel, orientation, geom)
    ii, jj = disc_offsets(geom, dem.resolution)
    row, col = pixel
    z = dem.heights[row + ii, col + jj]
    plane = a + gx * jj * dem.resolution + gy * ii * dem.resolution
    return float(np.max(np.abs(z - plane)))


def roughness_to_probability(r, thr: SafetyThresholds):
    """Linear ramp: 1 up to half the roughness limit, 0 from 1.5x the limit."""
    lo = 0.5 * thr.roughness_max
    hi = 1.5 * thr.roughness_max
    return np.clip((hi - np.asarray(r, dtype=float)) / (hi - lo), 0.0, 1.0)


def _shifted(h, m, di, dj):
    rows, cols = h.shape
    return h[m + di:rows - m + di, m + dj:cols - m + dj]


def _bilinear_field(h, m, dr, dc):
    r0, c0 = int(math.floor(dr)), int(math.floor(dc))
    fr, fc = dr - r0, dc - c0
    out = (1 - fr) * (1 - fc) * _shifted(h, m, r0, c0)
    if fc:
        out = out + (1 - fr) * fc * _shifted(h, m, r0, c0 + 1)
    if fr:
        out = out + fr * (1 - fc) * _shifted(h, m, r0 + 1, c0)
        if fc:
            out = out + fr * fc * _shifted(h, m, r0 + 1, c0 + 1)
    return out


def slope_and_roughness(dem: Dem, geom: LanderGeometry):
    """Per-orientation slope [deg] and roughness [m] over the interior.

    Returns:
        (slopes, rough) arrays of shape (n_o, rows - 2m, cols - 2m) and the margin m.
    """
    h = dem.heights
    res = dem.resolution
    m = footprint_margin(geom, res)
    rows, cols = h.shape
    n_o = geom.orientation_count
    if rows <= 2 * m or cols <= 2 * m:
        empty = np.zeros((n_o, max(rows - 2 * m, 0), max(cols - 2 * m, 0)))
        return empty, empty.copy(), m
    ii, jj = disc_offsets(geom, res)
    disc = [(_shifted(h, m, i, j), i * res, j * res) for i, j in zip(ii, jj)]
    slopes = np.empty((n_o, rows - 2 * m, cols - 2 * m))
    rough = np.empty_like(slopes)
    for k, theta in enumerate(geom.orientations()):
        dx, dy, dr, dc = pad_offsets(geom, theta, res)
        z = [_bilinear_field(h, m, a, b) for a, b in zip(dr, dc)]
        denom = 0.5 * len(z) * geom.radius**2
        a = sum(z) / len(z)
        gx = sum(x * zk for x, zk in zip(dx, z)) / denom
        gy = sum(y * zk for y, zk in zip(dy, z)) / denom
        slopes[k] = np.degrees(np.arctan(np.hypot(gx, gy)))
        worst = np.zeros_like(a)
        for zs, oy, ox in disc:
            np.maximum(worst, np.abs(zs - (a + gx * ox + gy * oy)), out=worst)
        rough[k] = worst
    return slopes, rough, m


def compute_safety_maps(dem: Dem, geom: LanderGeometry = None, thr: SafetyThresholds = None) -> SafetyMaps:
    """Deterministic {0,1} and stochastic [0,1] safety for every pixel.

    Border pixels whose footprint leaves the grid are marked unsafe.
    """
    geom = geom or LanderGeometry()
    thr = thr or SafetyThresholds()
    slopes, rough, m = slope_and_roughness(dem, geom)
    v_d = np.zeros(dem.shape)
    v_p = np.zeros(dem.shape)
    if slopes.size == 0:
        return SafetyMaps(v_d, v_p)
    slope_ok = slopes.max(axis=0) <= thr.slope_max
    prob = roughness_to_probability(rough, thr).min(axis=0)
    inner = (slice(m, dem.rows - m), slice(m, dem.cols - m))
    v_p[inner] = np.where(slope_ok, prob, 0.0)
    v_d[inner] = (slope_ok & (rough.max(axis=0) <= thr.roughness_max)).astype(float)
    return SafetyMaps(v_d, v_p)
