"""ZEM/ZEV feedback guidance and the energy-optimal time-to-go."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TGO_SCAN_STEP = 0.5  # s
TGO_SCAN_MAX = 500.0  # s
TGO_TOL = 1e-9  # s


class GuidanceError(ValueError):
    pass


class NoSolutionError(GuidanceError):
    """The time-to-go quartic has no strictly positive real root in the scan range."""


@dataclass
class GuidanceTarget:
    r_f: np.ndarray
    v_f: np.ndarray = None
    t_go: float = 0.0

    def __post_init__(self):
        self.r_f = np.asarray(self.r_f, dtype=float)
        self.v_f = np.zeros(3) if self.v_f is None else np.asarray(self.v_f, dtype=float)


@dataclass(frozen=True)
class GuidanceGains:
    k_r: float = 6.0
    k_v: float = 2.0


ENERGY_OPTIMAL = GuidanceGains(6.0, 2.0)


def zem_zev(r, v, r_f, v_f, t_go, g):
    """Zero-effort miss and velocity: terminal errors if no further control is applied."""
    if np.any(np.asarray(t_go) <= 0):
        raise GuidanceError(f"t_go must be positive, got {t_go}")
    t = np.asarray(t_go, dtype=float)[..., None] if np.ndim(t_go) else float(t_go)
    g = np.asarray(g, dtype=float)
    zem = r_f - (r + v * t + 0.5 * g * t**2)
    zev = v_f - (v + g * t)
    return zem, zev


def commanded_accel(zem, zev, gains: GuidanceGains, t_go, m=None, t_max=None):
    """Feedback acceleration ``K_R/t^2 ZEM - K_V/t ZEV``, saturated to ``t_max / m``.

    Saturation only rescales the vector, so its direction is preserved.
    ``t_max=None`` (or infinity) disables the limit.
    """
    t = np.asarray(t_go, dtype=float)[..., None] if np.ndim(t_go) else float(t_go)
    a = gains.k_r / t**2 * zem - gains.k_v / t * zev
    if t_max is None or math.isinf(t_max):
        return a
    limit = t_max / np.asarray(m, dtype=float)
    mag = np.linalg.norm(a, axis=-1)
    scale = np.where(mag > limit, limit / np.where(mag > 0, mag, 1.0), 1.0)
    return a * (scale[..., None] if np.ndim(scale) else float(scale))


def tgo_coefficients(r, v, r_f, v_f, g):
    """Coefficients (t^4 ... t^0) of the energy-optimal time-to-go quartic."""
    g = np.asarray(g, dtype=float)
    d = np.asarray(r_f, dtype=float) - np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    v_f = np.asarray(v_f, dtype=float)
    return np.array([
        g @ g,
        0.0,
        -2.0 * (v @ v + v_f @ v + v_f @ v_f),
        12.0 * d @ (v + v_f),
        -18.0 * d @ d,
    ])


def _poly(c, t):
    return (((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]


def _sign_near_zero(c):
    # Sign of p(t) for t -> 0+: set by the lowest-order nonzero coefficient.
    for coef in c[::-1]:
        if coef != 0:
            return math.copysign(1.0, coef)
    return 0.0


def optimal_tgo(r, v, r_f, v_f, g, step=TGO_SCAN_STEP, t_max=TGO_SCAN_MAX, tol=TGO_TOL) -> float:
    """Smallest strictly positive root of the time-to-go quartic.

    Scans ``(0, t_max]`` in ``step`` increments for a sign change, then
    bisects the bracketing cell to ``tol``.

    Raises:
        NoSolutionError: no sign change found.
    """
    c = tgo_coefficients(r, v, r_f, v_f, g)
    grid = np.arange(1, int(round(t_max / step)) + 1) * step
    values = np.polyval(c, grid)
    prev = _sign_near_zero(c)
    if prev == 0:
        raise NoSolutionError("degenerate quartic")
    signs = np.sign(values)
    change = np.nonzero(signs != prev)[0]
    if len(change) == 0:
        raise NoSolutionError("no positive real root in scan range")
    k = int(change[0])
    if values[k] == 0:
        return float(grid[k])
    lo = grid[k - 1] if k > 0 else 0.0
    hi = float(grid[k])
    f_lo = prev
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = _poly(c, mid)
        if f_mid == 0:
            return mid
        if math.copysign(1.0, f_mid) == f_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normalized_residual(r, v, r_f, v_f, g, t) -> float:
    """|p(t)| relative to the sum of the magnitudes of its terms."""
    c = tgo_coefficients(r, v, r_f, v_f, g)
    powers = t ** np.arange(4, -1, -1)
    scale = float(np.sum(np.abs(c) * powers))
    return abs(float(np.dot(c, powers))) / scale if scale > 0 else 0.0


def fly_unconstrained(r0, v0, r_f, v_f, t_go, g, gains=ENERGY_OPTIMAL, dt=0.01):
    """Closed-loop ZEM/ZEV with no thrust limit, batched over leading axes.

    ``t_go`` decreases with elapsed time; acceleration is held over each step
    and integrated exactly.  Stops when every trajectory reaches ``t_go = 0``.

    Returns:
        (r, v) at arrival, same shapes as the inputs.
    """
    r = np.array(r0, dtype=float)
    v = np.array(v0, dtype=float)
    r_f = np.asarray(r_f, dtype=float)
    v_f = np.asarray(v_f, dtype=float)
    g = np.asarray(g, dtype=float)
    remaining = np.array(t_go, dtype=float)
    while np.any(remaining > 0):
        live = remaining > 0
        h = np.where(live, np.minimum(dt, remaining), 0.0)
        t_now = np.where(live, remaining, 1.0)
        zem, zev = zem_zev(r, v, r_f, v_f, t_now, g)
        a = commanded_accel(zem, zev, gains, t_now) + g
        hh = h[..., None] if np.ndim(h) else h
        r = r + v * hh + 0.5 * a * hh**2
        v = v + a * hh
        remaining = np.where(live, remaining - h, 0.0)
        remaining = np.where(np.abs(remaining) < 1e-12, 0.0, remaining)
    return r, v
