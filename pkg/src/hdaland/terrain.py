"""Procedural lunar terrain: smooth base surface, crater population, boulder field.

Coordinates are metres in a horizontal frame whose origin sits on the centre
pixel of the field; ``x`` runs along columns and ``y`` along rows.  Pixel
``(row, col)`` has its centre at ``((col - cols//2) * res, (row - rows//2) * res)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

MAX_RELIEF = 50.0  # m, highest allowed terrain relief
CRATER_DEPTH_RATIO = 0.2
CRATER_RIM_RATIO = 0.04
CRATER_RIM_EXTENT = 1.5  # rim fades out at this many crater radii
BASE_BLUR_SIGMA = 20.0  # px
FIELD_BLUR_SIGMA = 100.0  # px, correlation scale of boulder fields


class TerrainParamError(ValueError):
    pass


@dataclass
class Dem:
    """Regular elevation grid; ``heights[row, col]`` in metres above ``datum``."""

    heights: np.ndarray
    resolution: float = 1.0
    datum: float = 0.0

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def shape(self):
        return self.heights.shape

    def copy(self) -> "Dem":
        return Dem(self.heights.copy(), self.resolution, self.datum)

    def world_to_pixel(self, x, y):
        """Fractional (row, col) of world point (x, y)."""
        return y / self.resolution + self.rows // 2, x / self.resolution + self.cols // 2

    def pixel_to_world(self, row, col):
        return (col - self.cols // 2) * self.resolution, (row - self.rows // 2) * self.resolution

    def nearest_pixel(self, x, y):
        """Nearest pixel index, or None when the point lies outside the field."""
        r, c = self.world_to_pixel(x, y)
        ri, ci = int(math.floor(r + 0.5)), int(math.floor(c + 0.5))
        if 0 <= ri < self.rows and 0 <= ci < self.cols:
            return ri, ci
        return None

    def bounds(self):
        """(x_min, x_max, y_min, y_max) of pixel centres."""
        x0, y0 = self.pixel_to_world(0, 0)
        x1, y1 = self.pixel_to_world(self.rows - 1, self.cols - 1)
        return x0, x1, y0, y1


@dataclass
class TerrainParams:
    rows: int = 1000
    cols: int = 1000
    resolution: float = 1.0
    base_noise_amplitude: float = 3.0
    crater_density: float = 40.0  # craters per km^2
    crater_diameter_range: tuple = (5.0, 100.0)
    boulder_density_coeffs: tuple = (0.02, 2.0)  # k [1/m^2], q [1/m] of N(>D) = k exp(-q D)
    boulder_diameter_range: tuple = (0.3, 5.0)
    boulder_field_fraction: float = 0.35  # share of the field covered by dense boulder fields
    boulder_field_factor: float = 40.0  # density multiplier inside boulder fields
    seed: int = 0

    def validate(self):
        if self.rows < 1 or self.cols < 1 or self.resolution <= 0:
            raise TerrainParamError("grid shape and resolution must be positive")
        if self.base_noise_amplitude < 0 or self.crater_density < 0:
            raise TerrainParamError("amplitude and densities must be non-negative")
        if not 0 <= self.boulder_field_fraction <= 1 or self.boulder_field_factor < 0:
            raise TerrainParamError("boulder field fraction must lie in [0, 1], factor >= 0")
        k, q = self.boulder_density_coeffs
        if k < 0 or q <= 0:
            raise TerrainParamError("boulder model needs k >= 0 and q > 0")
        for name in ("crater_diameter_range", "boulder_diameter_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi:
                raise TerrainParamError(f"{name} must satisfy 0 < min < max, got {(lo, hi)}")
        return self


def crater_profile(r, diameter):
    """Height change of a fresh simple crater at radial distance ``r``.

    Parabolic bowl from ``-0.2 D`` at the centre up to the rim crest
    ``+0.04 D`` at ``r = D/2``, then a raised-cosine ejecta rim decaying to
    zero at ``1.5 D/2``.
    """
    r = np.asarray(r, dtype=float)
    radius = 0.5 * diameter
    depth = CRATER_DEPTH_RATIO * diameter
    rim = CRATER_RIM_RATIO * diameter
    rho = r / radius
    bowl = -depth + (depth + rim) * rho**2
    outer = rim * 0.5 * (1.0 + np.cos(np.pi * (rho - 1.0) / (CRATER_RIM_EXTENT - 1.0)))
    return np.where(rho <= 1.0, bowl, np.where(rho < CRATER_RIM_EXTENT, outer, 0.0))


def boulder_profile(r, diameter):
    """Hemispherical bump of height ``D/2``."""
    r = np.asarray(r, dtype=float)
    radius = 0.5 * diameter
    return np.sqrt(np.clip(radius**2 - r**2, 0.0, None))


def _window(dem, cx, cy, reach):
    """Pixel window (slices and world offsets) covering a disc of radius ``reach``."""
    rc, cc = dem.world_to_pixel(cx, cy)
    span = reach / dem.resolution
    r0 = max(int(math.floor(rc - span)), 0)
    r1 = min(int(math.ceil(rc + span)), dem.rows - 1)
    c0 = max(int(math.floor(cc - span)), 0)
    c1 = min(int(math.ceil(cc + span)), dem.cols - 1)
    if r0 > r1 or c0 > c1:
        return None
    rows = np.arange(r0, r1 + 1)
    cols = np.arange(c0, c1 + 1)
    dy = (rows - dem.rows // 2) * dem.resolution - cy
    dx = (cols - dem.cols // 2) * dem.resolution - cx
    dist = np.hypot(dy[:, None], dx[None, :])
    return (slice(r0, r1 + 1), slice(c0, c1 + 1)), dist


def stamp_crater(dem: Dem, center, diameter: float) -> Dem:
    """Add a crater (in place) centred at world ``center``; off-field parts clip."""
    if diameter <= 0:
        raise TerrainParamError("crater diameter must be positive")
    reach = CRATER_RIM_EXTENT * 0.5 * diameter
    win = _window(dem, center[0], center[1], reach)
    if win is None:
        return dem
    sl, dist = win
    dem.heights[sl] += np.where(dist <= reach, crater_profile(dist, diameter), 0.0)
    return dem


def stamp_boulders(dem: Dem, centers, diameters) -> Dem:
    """Composite hemispherical boulders onto ``dem`` with the max rule (in place).

    Overlapping boulders do not stack: each pixel keeps the taller of its
    current value and any bump covering it.  The generator therefore stamps
    boulders into a separate layer that starts at zero.  A boulder covering no
    pixel centre is rasterised into its nearest pixel at full height.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    diameters = np.asarray(diameters, dtype=float).reshape(-1)
    if np.any(diameters <= 0):
        raise TerrainParamError("boulder diameter must be positive")
    if len(diameters) == 0:
        return dem
    radius = 0.5 * diameters
    rc, cc = dem.world_to_pixel(centers[:, 0], centers[:, 1])
    near_r = np.floor(rc + 0.5).astype(int)
    near_c = np.floor(cc + 0.5).astype(int)
    span = int(math.ceil(radius.max() / dem.resolution)) + 1
    covered = np.zeros(len(diameters), dtype=bool)
    for di in range(-span, span + 1):
        for dj in range(-span, span + 1):
            r = near_r + di
            c = near_c + dj
            dist = np.hypot((r - rc) * dem.resolution, (c - cc) * dem.resolution)
            hit = (dist <= radius) & (r >= 0) & (r < dem.rows) & (c >= 0) & (c < dem.cols)
            covered |= dist <= radius
            if hit.any():
                np.maximum.at(dem.heights, (r[hit], c[hit]), boulder_profile(dist[hit], diameters[hit]))
    lone = ~covered & (near_r >= 0) & (near_r < dem.rows) & (near_c >= 0) & (near_c < dem.cols)
    if lone.any():
        np.maximum.at(dem.heights, (near_r[lone], near_c[lone]), radius[lone])
    return dem


def stamp_boulder(dem: Dem, center, diameter: float) -> Dem:
    """Single-boulder form of :func:`stamp_boulders`."""
    return stamp_boulders(dem, [center], [diameter])


def _sample_power_law(rng, n, lo, hi, exponent=2.0):
    """Diameters with cumulative count N(>D) proportional to D^-exponent on [lo, hi]."""
    u = rng.random(n)
    a, b = lo**-exponent, hi**-exponent
    return (a - u * (a - b)) ** (-1.0 / exponent)


def _sample_truncated_exponential(rng, n, q, lo, hi):
    u = rng.random(n)
    a, b = math.exp(-q * lo), math.exp(-q * hi)
    return -np.log(a - u * (a - b)) / q


def base_surface(params: TerrainParams, rng) -> np.ndarray:
    noise = rng.standard_normal((params.rows, params.cols))
    if params.base_noise_amplitude == 0:
        return np.zeros_like(noise)
    smooth = gaussian_filter(noise, BASE_BLUR_SIGMA, mode="wrap")
    peak = np.max(np.abs(smooth))
    return smooth * (params.base_noise_amplitude / peak)


def expected_crater_count(params: TerrainParams) -> float:
    area_km2 = params.rows * params.cols * params.resolution**2 / 1e6
    return params.crater_density * area_km2


def expected_boulder_count(params: TerrainParams) -> float:
    k, q = params.boulder_density_coeffs
    lo, hi = params.boulder_diameter_range
    area = params.rows * params.cols * params.resolution**2
    return area * k * (math.exp(-q * lo) - math.exp(-q * hi))


def boulder_field_mask(params: TerrainParams, rng) -> np.ndarray:
    """Low-frequency regions of high rock abundance covering ``boulder_field_fraction``."""
    noise = gaussian_filter(rng.standard_normal((params.rows, params.cols)), FIELD_BLUR_SIGMA, mode="wrap")
    if params.boulder_field_fraction <= 0:
        return np.zeros(noise.shape, dtype=bool)
    return noise >= np.quantile(noise, 1.0 - params.boulder_field_fraction)


def _sample_boulders(params, rng, dem):
    k, q = params.boulder_density_coeffs
    mask = boulder_field_mask(params, rng)
    background = expected_boulder_count(params)
    peak = background * max(params.boulder_field_factor, 1.0)
    # Thinning: candidates at the peak density, kept with probability density(x) / peak.
    n = rng.poisson(peak) if k > 0 else 0
    centers = _sample_centers(rng, dem, n)
    sizes = _sample_truncated_exponential(rng, n, q, *params.boulder_diameter_range)
    keep_u = rng.random(n)
    rc, cc = dem.world_to_pixel(centers[:, 0], centers[:, 1])
    rows = np.clip(np.floor(rc + 0.5).astype(int), 0, dem.rows - 1)
    cols = np.clip(np.floor(cc + 0.5).astype(int), 0, dem.cols - 1)
    in_field = mask[rows, cols]
    accept = np.where(in_field, params.boulder_field_factor, 1.0) / max(params.boulder_field_factor, 1.0)
    keep = keep_u < accept
    return centers[keep], sizes[keep]


def _sample_centers(rng, dem, n):
    x0, x1, y0, y1 = dem.bounds()
    return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])


def generate_terrain(params: TerrainParams) -> Dem:
    """Synthesize a DEM: base surface, then craters, then boulders."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    dem = Dem(base_surface(params, rng), params.resolution)

    n_craters = rng.poisson(expected_crater_count(params))
    diameters = _sample_power_law(rng, n_craters, *params.crater_diameter_range)
    for (cx, cy), d in zip(_sample_centers(rng, dem, n_craters), diameters):
        stamp_crater(dem, (cx, cy), d)

    centers, sizes = _sample_boulders(params, rng, dem)
    layer = Dem(np.zeros_like(dem.heights), params.resolution)
    stamp_boulders(layer, centers, sizes)
    dem.heights += layer.heights

    relief = float(np.ptp(dem.heights))
    if relief > MAX_RELIEF:
        lo = dem.heights.min()
        dem.heights = lo + (dem.heights - lo) * (MAX_RELIEF / relief)
    return dem
