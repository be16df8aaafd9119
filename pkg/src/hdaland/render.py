"""Rasterized episode frames: safety map, LIDAR footprint outline, ground track."""

from __future__ import annotations

import numpy as np

SAFE_LEVEL = 170
UNSAFE_LEVEL = 60
TRACK_LEVEL = 255
FOV_LEVEL = 0


def _to_pixel(dem, x, y):
    r, c = dem.world_to_pixel(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return np.floor(r + 0.5).astype(int), np.floor(c + 0.5).astype(int)


def fov_box(dem, frame):
    """Inclusive (row0, row1, col0, col1) of the footprint outline."""
    cx, cy = frame.center
    r0, c0 = _to_pixel(dem, cx - 0.5 * frame.w_x, cy - 0.5 * frame.w_y)
    r1, c1 = _to_pixel(dem, cx + 0.5 * frame.w_x, cy + 0.5 * frame.w_y)
    return int(r0), int(r1), int(c0), int(c1)


def _draw_segment(img, p, q):
    n = int(max(abs(q[0] - p[0]), abs(q[1] - p[1]))) + 1
    rows = np.rint(np.linspace(p[0], q[0], n)).astype(int)
    cols = np.rint(np.linspace(p[1], q[1], n)).astype(int)
    ok = (rows >= 0) & (rows < img.shape[0]) & (cols >= 0) & (cols < img.shape[1])
    img[rows[ok], cols[ok]] = TRACK_LEVEL


def render_frame(v_d, dem, frame=None, track_xy=None):
    """8-bit image of ``v_d`` with the footprint outline and the ground track burnt in."""
    img = np.where(np.asarray(v_d) >= 1, SAFE_LEVEL, UNSAFE_LEVEL).astype(np.uint8)
    if track_xy is not None and len(track_xy):
        xy = np.asarray(track_xy, dtype=float)
        rows, cols = _to_pixel(dem, xy[:, 0], xy[:, 1])
        if len(rows) == 1:
            _draw_segment(img, (rows[0], cols[0]), (rows[0], cols[0]))
        for k in range(len(rows) - 1):
            _draw_segment(img, (rows[k], cols[k]), (rows[k + 1], cols[k + 1]))
    if frame is not None:
        r0, r1, c0, c1 = fov_box(dem, frame)
        h, w = img.shape
        rr = np.clip([r0, r1], 0, h - 1)
        cc = np.clip([c0, c1], 0, w - 1)
        for r in (r0, r1):
            if 0 <= r < h:
                img[r, cc[0]:cc[1] + 1] = FOV_LEVEL
        for c in (c0, c1):
            if 0 <= c < w:
                img[rr[0]:rr[1] + 1, c] = FOV_LEVEL
    return img


def overlay_pixel_count(img) -> int:
    return int(np.count_nonzero(img == TRACK_LEVEL))
