"""Grid file formats: HDAGRID (float32 raster) and binary PGM previews."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

MAGIC = "HDAGRID"
VERSION = 1


class GridFormatError(ValueError):
    pass


def write_hdagrid(path, grid, resolution=1.0):
    """Write a 2-D grid as an ASCII header line followed by little-endian float32 data."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise GridFormatError(f"expected a 2-D grid, got shape {grid.shape}")
    rows, cols = grid.shape
    header = f"{MAGIC} {VERSION} {rows} {cols} {float(resolution)!r}\n".encode("ascii")
    payload = np.ascontiguousarray(grid, dtype="<f4").tobytes()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write grid file {path}: {exc}") from exc
    return path


def read_hdagrid(path):
    """Read an HDAGRID file.

    Returns:
        (grid, resolution) with ``grid`` as a float64 array.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline()
        data = fh.read()
    try:
        magic, version, rows, cols, res = line.decode("ascii").split()
    except ValueError as exc:
        raise GridFormatError(f"{path}: malformed header {line!r}") from exc
    if magic != MAGIC or int(version) != VERSION:
        raise GridFormatError(f"{path}: not an HDAGRID v{VERSION} file")
    rows, cols = int(rows), int(cols)
    expected = rows * cols * 4
    if len(data) != expected:
        raise GridFormatError(f"{path}: expected {expected} payload bytes, found {len(data)}")
    grid = np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float64)
    return grid, float(res)


def write_pgm(path, image, maxval=255):
    """Write a binary (P5) PGM. ``maxval`` > 255 produces 16-bit big-endian samples."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise GridFormatError(f"expected a 2-D image, got shape {image.shape}")
    if not 0 < maxval < 65536:
        raise GridFormatError(f"invalid maxval {maxval}")
    rows, cols = image.shape
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.clip(np.rint(image), 0, maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())
    return Path(path)


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise GridFormatError(f"{path}: not a binary PGM")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos:], dtype=dtype).reshape(rows, cols).astype(np.int64)


def heights_to_pgm16(path, heights):
    """Render a height field as a 16-bit PGM stretched over its own min/max."""
    h = np.asarray(heights, dtype=float)
    lo, hi = float(h.min()), float(h.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    return write_pgm(path, (h - lo) * scale, maxval=65535)


def mask_to_pgm8(path, mask):
    """Render a {0,1} map (e.g. deterministic safety) as an 8-bit PGM: white = 1."""
    return write_pgm(path, np.asarray(mask, dtype=float) * 255.0, maxval=255)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
