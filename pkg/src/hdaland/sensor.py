"""Pseudo-LIDAR observation: a noisy, masked 64x64 crop of the stochastic safety map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import GeometryError, LanderState
from .gridio import read_hdagrid, write_hdagrid


@dataclass(frozen=True)
class SensorParams:
    fov_deg: float = 11.4
    dem_size: int = 64
    noise_range_scale: float = 500.0  # m
    noise_sigma_slope: float = 0.05
    mask_elevation_min: float = 70.0  # deg
    interval: float = 5.0  # s

    def __post_init__(self):
        if not 0 < self.fov_deg < 90:
            raise ValueError("LIDAR field of view must lie in (0, 90) degrees")
        if self.dem_size != 64:
            raise ValueError("observation size is fixed at 64x64")


@dataclass
class ObservationFrame:
    o_p: np.ndarray
    w_x: float
    w_y: float
    center: tuple
    lander_snapshot: LanderState
    timestamp: float

    def pixel_centers(self):
        """World (x, y) of every observation pixel, each shaped like ``o_p``."""
        return lattice(self.center, self.w_x, self.w_y, self.o_p.shape[0])

    def save(self, stem):
        """Write ``<stem>.hdagrid`` plus a ``<stem>.txt`` sidecar with acquisition data."""
        stem = Path(stem)
        write_hdagrid(stem.with_suffix(".hdagrid"), self.o_p, resolution=self.w_x / self.o_p.shape[1])
        s = self.lander_snapshot
        fields = {
            "w_x": self.w_x, "w_y": self.w_y,
            "center_x": self.center[0], "center_y": self.center[1],
            "timestamp": self.timestamp,
            "r_x": s.r[0], "r_y": s.r[1], "r_z": s.r[2],
            "v_x": s.v[0], "v_y": s.v[1], "v_z": s.v[2],
            "m": s.m, "t": s.t,
        }
        with open(stem.with_suffix(".txt"), "w") as fh:
            for key, value in fields.items():
                fh.write(f"{key} = {float(value)!r}\n")
        return stem

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        o_p, _ = read_hdagrid(stem.with_suffix(".hdagrid"))
        meta = {}
        with open(stem.with_suffix(".txt")) as fh:
            for line in fh:
                key, _, value = line.partition("=")
                meta[key.strip()] = float(value)
        snap = LanderState(
            [meta["r_x"], meta["r_y"], meta["r_z"]],
            [meta["v_x"], meta["v_y"], meta["v_z"]],
            meta["m"], meta["t"],
        )
        return cls(o_p, meta["w_x"], meta["w_y"], (meta["center_x"], meta["center_y"]), snap, meta["timestamp"])


def fov_width(slant_range: float, fov_deg: float) -> float:
    """Side of the square LIDAR footprint: ``r_s * tan(fov)``."""
    if slant_range < 0:
        raise ValueError("slant range must be non-negative")
    return slant_range * math.tan(math.radians(fov_deg))


def slant_geometry(pixel_pos, lander: LanderState):
    """Range [m] and elevation angle [deg] of the lander as seen from a ground point."""
    d = np.asarray(lander.r, dtype=float) - np.asarray(pixel_pos, dtype=float)
    if d[2] <= 0:
        raise GeometryError("lander must be strictly above the observed point")
    horizontal = math.hypot(d[0], d[1])
    return math.sqrt(horizontal**2 + d[2] ** 2), math.degrees(math.atan2(d[2], horizontal))


def lattice(center, w_x, w_y, n):
    offsets = (np.arange(n) + 0.5) / n - 0.5
    xs = center[0] + offsets * w_x
    ys = center[1] + offsets * w_y
    return np.broadcast_to(xs[None, :], (n, n)), np.broadcast_to(ys[:, None], (n, n))


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def generate_observation(v_p, lander: LanderState, target, params: SensorParams = None, rng=None,
                         resolution: float = 1.0) -> ObservationFrame:
    """Sample the safety map over the LIDAR footprint centred on ``target``.

    Pixels seen at an elevation angle below ``mask_elevation_min`` and pixels
    outside the field are 0.  Every other pixel takes its nearest ``v_p``
    value plus Gaussian noise with sigma ``range / 500 * 0.05``, clipped to
    [0, 1].  The footprint is taken to lie in the horizontal plane at the
    target altitude.
    """
    params = params or SensorParams()
    rng = _as_rng(rng)
    v_p = np.asarray(v_p, dtype=float)
    target = np.asarray(target, dtype=float)
    dz = lander.r[2] - target[2]
    if dz <= 0:
        raise GeometryError("lander must be above the target plane")
    r_s = float(np.linalg.norm(lander.r - target))
    w = fov_width(r_s, params.fov_deg)
    n = params.dem_size
    xs, ys = lattice(target[:2], w, w, n)

    horizontal = np.hypot(xs - lander.r[0], ys - lander.r[1])
    elevation = np.degrees(np.arctan2(dz, horizontal))
    slant = np.hypot(horizontal, dz)

    rows, cols = v_p.shape
    ri = np.floor(ys / resolution + rows // 2 + 0.5).astype(int)
    ci = np.floor(xs / resolution + cols // 2 + 0.5).astype(int)
    inside = (ri >= 0) & (ri < rows) & (ci >= 0) & (ci < cols)
    sampled = np.zeros((n, n))
    sampled[inside] = v_p[ri[inside], ci[inside]]

    sigma = slant / params.noise_range_scale * params.noise_sigma_slope
    noisy = np.clip(sampled + rng.standard_normal((n, n)) * sigma, 0.0, 1.0)
    visible = inside & (elevation >= params.mask_elevation_min)
    o_p = np.where(visible, noisy, 0.0)
    return ObservationFrame(o_p, w, w, (float(target[0]), float(target[1])), lander.copy(), lander.t)
