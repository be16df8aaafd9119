"""Collections of DEMs with precomputed safety maps, on disk and in memory."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .gridio import ensure_dir, read_hdagrid, write_hdagrid
from .safety import LanderGeometry, SafetyMaps, SafetyThresholds, compute_safety_maps
from .terrain import Dem, TerrainParams, generate_terrain

MANIFEST = "manifest.json"


class LibraryError(RuntimeError):
    pass


@dataclass
class LibraryEntry:
    name: str
    dem: Dem
    maps: SafetyMaps
    seed: int = None
    _hazard_cache: dict = field(default_factory=dict, repr=False)

    def hazard_fraction_map(self, radius: float) -> np.ndarray:
        """Share of in-field pixels within ``radius`` metres that are unsafe, per pixel."""
        if radius not in self._hazard_cache:
            k = int(np.floor(radius / self.dem.resolution))
            off = np.arange(-k, k + 1) * self.dem.resolution
            disc = (off[:, None] ** 2 + off[None, :] ** 2 <= radius**2).astype(float)
            hazard = (self.maps.v_d == 0).astype(float)
            counts = np.rint(fftconvolve(hazard, disc, mode="same"))
            support = np.rint(fftconvolve(np.ones_like(hazard), disc, mode="same"))
            self._hazard_cache[radius] = counts / support
        return self._hazard_cache[radius]


class TerrainLibrary:
    def __init__(self, entries):
        self.entries = list(entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> LibraryEntry:
        return self.entries[i]

    @classmethod
    def generate(cls, params: TerrainParams, seeds, geom=None, thr=None):
        entries = []
        for seed in seeds:
            dem = generate_terrain(replace(params, seed=int(seed)))
            entries.append(LibraryEntry(f"dem_{int(seed):06d}", dem, compute_safety_maps(dem, geom, thr), int(seed)))
        return cls(entries)

    def save(self, out_dir, extra=None):
        out = ensure_dir(out_dir)
        records = []
        for e in self.entries:
            files = {"dem": f"{e.name}.hdagrid", "v_d": f"{e.name}_vd.hdagrid", "v_p": f"{e.name}_vp.hdagrid"}
            write_hdagrid(out / files["dem"], e.dem.heights, e.dem.resolution)
            write_hdagrid(out / files["v_d"], e.maps.v_d, e.dem.resolution)
            write_hdagrid(out / files["v_p"], e.maps.v_p, e.dem.resolution)
            records.append({"name": e.name, "seed": e.seed, **files})
        doc = {"format": "hdaland-terrain-library", "version": 1, "entries": records, **(extra or {})}
        with open(out / MANIFEST, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return out / MANIFEST

    @classmethod
    def load(cls, directory, limit=None):
        directory = Path(directory)
        path = directory / MANIFEST
        if not path.exists():
            raise LibraryError(f"terrain library manifest not found: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        entries = []
        for rec in doc["entries"][:limit]:
            heights, res = read_hdagrid(directory / rec["dem"])
            v_d, _ = read_hdagrid(directory / rec["v_d"])
            v_p, _ = read_hdagrid(directory / rec["v_p"])
            entries.append(LibraryEntry(rec["name"], Dem(heights, res), SafetyMaps(v_d, v_p), rec.get("seed")))
        if not entries:
            raise LibraryError(f"terrain library {directory} is empty")
        return cls(entries)


def easy_terrain(size=1000, patch_center=(0.0, 0.0), patch_radius=120.0, resolution=1.0, seed=0,
                 geom: LanderGeometry = None, thr: SafetyThresholds = None) -> LibraryEntry:
    """Flat, safe field with one rough circular hazard patch."""
    rng = np.random.default_rng(seed)
    dem = Dem(np.zeros((size, size)), resolution)
    cols, rows = np.meshgrid(np.arange(size), np.arange(size))
    x, y = dem.pixel_to_world(rows, cols)
    inside = (x - patch_center[0]) ** 2 + (y - patch_center[1]) ** 2 <= patch_radius**2
    dem.heights[inside] = rng.uniform(0.0, 1.5, int(inside.sum()))
    return LibraryEntry("easy", dem, compute_safety_maps(dem, geom, thr), seed)
