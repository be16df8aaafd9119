"""3-DOF translational lander dynamics with mass depletion and thrust execution error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class CommandError(ValueError):
    """Commanded thrust exceeds the engine limit."""


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    m0: float = 1200.0  # kg
    m_dry: float = 1150.0  # kg
    isp: float = 325.0  # s
    t_max: float = 12000.0  # N
    g: tuple = (0.0, 0.0, -1.62)  # m/s^2
    g_ref: float = 9.80665  # m/s^2
    thrust_error_ratio: float = 0.05

    def __post_init__(self):
        if not self.t_max > 0 or not self.m0 > self.m_dry:
            raise ValueError("need t_max > 0 and m0 > m_dry")

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.g, dtype=float)

    @property
    def fuel_capacity(self) -> float:
        return self.m0 - self.m_dry


@dataclass
class LanderState:
    """Position/velocity in the field frame (z up), mass, elapsed time."""

    r: np.ndarray
    v: np.ndarray
    m: float
    t: float = 0.0

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.m = float(self.m)

    def copy(self) -> "LanderState":
        return LanderState(self.r.copy(), self.v.copy(), self.m, self.t)


class Propagation(NamedTuple):
    state: LanderState
    thrust: np.ndarray  # executed thrust vector at the start of the step [N]
    fuel_exhausted: bool


def mass_flow(thrust_mag, params: VehicleParams):
    return thrust_mag / (params.g_ref * params.isp)


def rk4_step(r, v, m, thrust, dt, params: VehicleParams):
    """One RK4 step of the equations of motion under constant thrust.

    Broadcasts over leading axes: ``r``, ``v``, ``thrust`` are (..., 3) and
    ``m`` is (...).
    """
    g = params.gravity
    mdot = mass_flow(np.linalg.norm(thrust, axis=-1), params)
    m = np.asarray(m, dtype=float)

    def accel(mass):
        return thrust / mass[..., None] + g

    a1 = accel(m)
    a2 = accel(m - 0.5 * dt * mdot)
    a4 = accel(m - dt * mdot)
    # Stages 2 and 3 see the same mass, so only the velocity slopes differ.
    v2 = v + 0.5 * dt * a1
    v3 = v + 0.5 * dt * a2
    v4 = v + dt * a2
    r_new = r + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    v_new = v + dt / 6.0 * (a1 + 4.0 * a2 + a4)
    return r_new, v_new, m - dt * mdot


def sample_thrust_error(rng, ratio: float) -> float:
    """Gaussian magnitude error, truncated at three sigma by resampling."""
    if ratio <= 0:
        return 0.0
    while True:
        eps = rng.normal(0.0, ratio)
        if abs(eps) <= 3.0 * ratio:
            return eps


def propagate(state: LanderState, thrust, dt: float, params: VehicleParams, rng=None,
              thrust_error: bool = True) -> Propagation:
    """Advance ``state`` by ``dt`` under a commanded thrust vector.

    The executed thrust is ``commanded * (1 + eps)`` re-saturated to the engine
    limit.  If the propellant runs out inside the step the engine is cut for
    the remainder and ``fuel_exhausted`` is set.

    Raises:
        CommandError: commanded magnitude above ``t_max``.
    """
    thrust = np.asarray(thrust, dtype=float)
    mag = float(np.linalg.norm(thrust))
    if mag > params.t_max * (1.0 + 1e-12):
        raise CommandError(f"commanded thrust {mag:.3f} N exceeds limit {params.t_max} N")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if thrust_error and params.thrust_error_ratio > 0 and mag > 0:
        if rng is None:
            raise ValueError("thrust error enabled but no random generator supplied")
        thrust = thrust * (1.0 + sample_thrust_error(rng, params.thrust_error_ratio))
        mag = float(np.linalg.norm(thrust))
        if mag > params.t_max:
            thrust = thrust * (params.t_max / mag)
            mag = params.t_max

    mdot = mass_flow(mag, params)
    fuel = state.m - params.m_dry
    burn = dt if mdot * dt <= fuel else max(fuel, 0.0) / mdot
    r, v, m = state.r, state.v, state.m
    if burn > 0:
        r, v, m = rk4_step(r, v, m, thrust, burn, params)
    exhausted = burn < dt
    if exhausted:
        m = params.m_dry
        r, v, _ = rk4_step(r, v, m, np.zeros(3), dt - burn, params)
    return Propagation(LanderState(r, v, float(m), state.t + dt), thrust, exhausted)


def glide_slope_angle(r) -> float:
    """Angle [deg] between the vertical and the line to the target at the origin."""
    rx, ry, rz = (float(c) for c in r)
    if rz <= 0:
        raise GeometryError(f"glide slope undefined for r_z = {rz}")
    return math.degrees(math.atan2(math.hypot(rx, ry), rz))


TRAJECTORY_COLUMNS = ("t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "m", "thrust", "theta_g")


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)

    def record(self, state: LanderState, thrust_mag: float, theta_g: float, **extra):
        row = {
            "t": state.t, "r_x": state.r[0], "r_y": state.r[1], "r_z": state.r[2],
            "v_x": state.v[0], "v_y": state.v[1], "v_z": state.v[2],
            "m": state.m, "thrust": thrust_mag, "theta_g": theta_g,
        }
        row.update(extra)
        self.rows.append(row)

    def write_csv(self, path):
        columns = list(TRAJECTORY_COLUMNS)
        for row in self.rows:
            columns.extend(k for k in row if k not in columns)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        return path


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
