"""Episode engine: initial conditions, 5 s decision epochs, observations, reward, termination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import LanderState, TrajectoryLog, VehicleParams, propagate
from .guidance import GuidanceGains, NoSolutionError, commanded_accel, optimal_tgo, zem_zev
from .sensor import ObservationFrame, SensorParams, generate_observation

OBS_DIM = 44
ACTION_DIM = 5
LATENT_DIM = 32
POSITION_SCALE = 1000.0
VELOCITY_SCALE = 50.0
FOV_SCALE = 200.0

DIFFICULTIES = ("training-random", "hard-eval")
CAUSES = ("arrived", "crash", "fuel_out", "timeout")


class ConfigError(ValueError):
    pass


class EpisodeDoneError(RuntimeError):
    """``step`` called on a finished (or never started) episode."""


def _range(value, name):
    lo, hi = (float(v) for v in value)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} must be a finite non-empty range, got {value}")
    return lo, hi


@dataclass
class EnvConfig:
    altitude_range: tuple = (900.0, 1000.0)  # m
    distance_range: tuple = (200.0, 250.0)  # m, horizontal distance to the initial target
    descent_speed_range: tuple = (20.0, 35.0)  # m/s
    horizontal_speed_range: tuple = (5.0, 10.0)  # m/s
    heading_jitter_deg: float = 15.0
    z_f: float = 50.0  # m, target altitude
    z_max: float = 50.0  # m, highest terrain
    alpha_m: float = 1.0
    alpha_f: float = -10.0
    alpha_v: float = 0.1
    alpha_r: float = 0.01
    alpha_s: float = 1.0
    difficulty: str = "training-random"
    target_box_half: float = 200.0  # m
    hard_radius: float = 100.0  # m
    hard_fraction: float = 0.8
    hard_max_draws: int = 10000
    k_r_range: tuple = (5.0, 7.0)
    k_v_range: tuple = (1.0, 3.0)
    dtgo_range: tuple = (4.25, 5.75)  # s
    alpha_range: tuple = (-0.25, 0.25)
    epoch: float = 5.0  # s
    inner_dt: float = 0.1  # s
    terminal_tgo: float = 5.0  # s
    fallback_tgo: float = 40.0  # s, used when the time-to-go quartic has no root
    max_steps: int = 30
    thrust_error: bool = True
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    sensor: SensorParams = field(default_factory=SensorParams)

    def validate(self):
        for name in ("altitude_range", "distance_range", "descent_speed_range", "horizontal_speed_range",
                     "k_r_range", "k_v_range", "dtgo_range", "alpha_range"):
            _range(getattr(self, name), name)
        for name in ("alpha_m", "alpha_f", "alpha_v", "alpha_r", "alpha_s"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"reward weight {name} must be finite")
        if self.difficulty not in DIFFICULTIES:
            raise ConfigError(f"difficulty must be one of {DIFFICULTIES}, got {self.difficulty!r}")
        if self.inner_dt <= 0 or self.epoch <= 0:
            raise ConfigError("epoch and inner_dt must be positive")
        if self.terminal_tgo < self.epoch:
            raise ConfigError("terminal_tgo must be at least one epoch long")
        if self.altitude_range[0] <= self.z_f:
            raise ConfigError("initial altitude must lie above the target plane")
        return self


@dataclass
class AgentAction:
    k_r: float
    k_v: float
    dtgo: float
    alpha_x: float
    alpha_y: float
    # "agent": commanded t_go decremented by dtgo; "optimal": re-solved every epoch
    tgo_mode: str = "agent"
    target_override: tuple = None  # absolute (x, y) retarget, bypasses the shift rule

    def as_unit(self, cfg: EnvConfig) -> np.ndarray:
        out = []
        for value, (lo, hi) in zip(self._values(), _action_ranges(cfg)):
            out.append((value - lo) / (hi - lo) if hi > lo else 0.5)
        return np.array(out)

    def _values(self):
        return (self.k_r, self.k_v, self.dtgo, self.alpha_x, self.alpha_y)


def _action_ranges(cfg: EnvConfig):
    return (cfg.k_r_range, cfg.k_v_range, cfg.dtgo_range, cfg.alpha_range, cfg.alpha_range)


def scale_action(unit, cfg: EnvConfig = None) -> AgentAction:
    """Affine map from the unit box onto the action ranges."""
    cfg = cfg or EnvConfig()
    unit = np.asarray(unit, dtype=float)
    if unit.shape != (ACTION_DIM,):
        raise ValueError(f"action must have {ACTION_DIM} components, got shape {unit.shape}")
    vals = [lo + u * (hi - lo) for u, (lo, hi) in zip(unit, _action_ranges(cfg))]
    return AgentAction(*(float(v) for v in vals))


def _clamp(value, lo, hi):
    if lo > hi:
        return 0.5 * (lo + hi)
    return min(max(value, lo), hi)


def apply_target_shift(prev_target, alpha_x, alpha_y, w_x, w_y, bounds):
    """Shift the target by a fraction of the FOV, clamped so the next FOV stays inside the field.

    Args:
        prev_target: current (x, y).
        bounds: (x_min, x_max, y_min, y_max) of the field.
    """
    x = prev_target[0] + alpha_x * w_x
    y = prev_target[1] + alpha_y * w_y
    x0, x1, y0, y1 = bounds
    return (_clamp(x, x0 + 0.5 * w_x, x1 - 0.5 * w_x), _clamp(y, y0 + 0.5 * w_y, y1 - 0.5 * w_y))


def pooled_latent(o_p) -> np.ndarray:
    """Fallback 32-value summary of an observation: means over a 4x8 block grid."""
    o_p = np.asarray(o_p, dtype=float)
    return o_p.reshape(4, 16, 8, 8).mean(axis=(1, 3)).ravel()


def encode_observation(frame: ObservationFrame, state: LanderState, target, latent,
                       vehicle: VehicleParams = None) -> np.ndarray:
    """44-vector: position, velocity, mass, FOV widths, target, latent."""
    vehicle = vehicle or VehicleParams()
    latent = np.asarray(latent, dtype=float).ravel()
    if latent.shape != (LATENT_DIM,):
        raise ValueError(f"latent must have {LATENT_DIM} entries")
    mass = (state.m - vehicle.m_dry) / (vehicle.m0 - vehicle.m_dry)
    return np.concatenate([
        np.asarray(state.r) / POSITION_SCALE,
        np.asarray(state.v) / VELOCITY_SCALE,
        [mass],
        [frame.w_x / FOV_SCALE, frame.w_y / FOV_SCALE],
        np.asarray(target, dtype=float) / POSITION_SCALE,
        latent,
    ])


def unit_step(x) -> float:
    return 1.0 if x >= 0 else 0.0


@dataclass
class RewardContext:
    m_prev: float
    m_now: float
    z: float
    speed: float
    miss: float
    done: bool
    crash: bool  # target plane crossed before the terminal guidance epoch
    v_d: float = 0.0  # touchdown safety, +1 safe / -1 unsafe


def reward_terms(ctx: RewardContext, cfg: EnvConfig) -> dict:
    vp = cfg.vehicle
    d = 1.0 if ctx.done else 0.0
    return {
        "fuel": -cfg.alpha_m * (ctx.m_prev - ctx.m_now) / (vp.m0 - vp.m_dry),
        "violation": cfg.alpha_f * (unit_step(cfg.z_max - ctx.z) * float(ctx.crash) + unit_step(vp.m_dry - ctx.m_now)),
        "velocity": -cfg.alpha_v * d * ctx.speed,
        "miss": -cfg.alpha_r * d * ctx.miss,
        "safety": cfg.alpha_s * d * ctx.v_d,
    }


def compute_reward(ctx: RewardContext, cfg: EnvConfig = None) -> float:
    """Negated fuel/velocity/miss penalties, violation penalty and touchdown safety bonus."""
    t = reward_terms(ctx, cfg or EnvConfig())
    return t["fuel"] + t["violation"] + t["velocity"] + t["miss"] + t["safety"]


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class EpisodeState:
    rng: np.random.Generator
    entry: object
    state: LanderState
    target: np.ndarray
    initial_target: np.ndarray
    t_go: float
    frame: ObservationFrame
    latent: np.ndarray
    observation: np.ndarray
    steps: int = 0
    done: bool = False
    cause: str = None
    max_theta_g: float = float("nan")
    max_thrust: float = 0.0
    rewards: list = field(default_factory=list)
    components: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log: TrajectoryLog = field(default_factory=TrajectoryLog)
    info: dict = field(default_factory=dict)


def glide_angle_to(r, target) -> float:
    """Glide-slope angle [deg] of ``r`` relative to ``target``; NaN when not above it."""
    dz = r[2] - target[2]
    if dz <= 0:
        return float("nan")
    return math.degrees(math.atan2(math.hypot(r[0] - target[0], r[1] - target[1]), dz))


class LandingEnv:
    """Single-episode engine over a terrain library.

    Args:
        config: episode configuration.
        library: non-empty :class:`~hdaland.library.TerrainLibrary`.
        encoder: callable mapping a 64x64 observation to a 32-vector;
            defaults to :func:`pooled_latent`.
    """

    def __init__(self, config: EnvConfig, library, encoder=None):
        self.config = config.validate()
        if library is None or len(library) == 0:
            raise ConfigError("terrain library is empty")
        self.library = library
        self.encoder = encoder or pooled_latent
        self.episode: EpisodeState = None

    # -- reset --------------------------------------------------------------

    def _central_pixels(self, dem):
        half = self.config.target_box_half / dem.resolution
        r0 = max(0, int(math.ceil(dem.rows // 2 - half)))
        r1 = min(dem.rows - 1, int(math.floor(dem.rows // 2 + half)))
        c0 = max(0, int(math.ceil(dem.cols // 2 - half)))
        c1 = min(dem.cols - 1, int(math.floor(dem.cols // 2 + half)))
        return r0, r1, c0, c1

    def _draw_target(self, rng):
        cfg = self.config
        if cfg.difficulty == "training-random":
            entry = self.library[int(rng.integers(len(self.library)))]
            r0, r1, c0, c1 = self._central_pixels(entry.dem)
            row, col = int(rng.integers(r0, r1 + 1)), int(rng.integers(c0, c1 + 1))
            return entry, np.array([*entry.dem.pixel_to_world(row, col), cfg.z_f], dtype=float)
        for _ in range(cfg.hard_max_draws):
            entry = self.library[int(rng.integers(len(self.library)))]
            r0, r1, c0, c1 = self._central_pixels(entry.dem)
            row, col = int(rng.integers(r0, r1 + 1)), int(rng.integers(c0, c1 + 1))
            if entry.hazard_fraction_map(cfg.hard_radius)[row, col] >= cfg.hard_fraction:
                return entry, np.array([*entry.dem.pixel_to_world(row, col), cfg.z_f], dtype=float)
        raise ConfigError(
            f"no hard-eval target found in {cfg.hard_max_draws} draws: terrain library is too safe")

    def _draw_initial_state(self, rng, target):
        cfg = self.config
        z0 = rng.uniform(*cfg.altitude_range)
        dist = rng.uniform(*cfg.distance_range)
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        descent = rng.uniform(*cfg.descent_speed_range)
        speed = rng.uniform(*cfg.horizontal_speed_range)
        heading = azimuth + math.pi + math.radians(rng.uniform(-cfg.heading_jitter_deg, cfg.heading_jitter_deg))
        r = [target[0] + dist * math.cos(azimuth), target[1] + dist * math.sin(azimuth), z0]
        v = [speed * math.cos(heading), speed * math.sin(heading), -descent]
        return LanderState(r, v, cfg.vehicle.m0, 0.0)

    def _solve_tgo(self, state, target, default):
        try:
            return optimal_tgo(state.r, state.v, target, np.zeros(3), self.config.vehicle.gravity)
        except NoSolutionError:
            return default

    def _observe(self, ep: EpisodeState):
        frame = generate_observation(ep.entry.maps.v_p, ep.state, ep.target, self.config.sensor, ep.rng,
                                     ep.entry.dem.resolution)
        ep.frame = frame
        ep.frames.append(frame)
        ep.latent = np.asarray(self.encoder(frame.o_p), dtype=float)
        ep.observation = encode_observation(frame, ep.state, ep.target, ep.latent, self.config.vehicle)
        return ep.observation

    def reset(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        entry, target = self._draw_target(rng)
        state = self._draw_initial_state(rng, target)
        t_go = self._solve_tgo(state, target, self.config.fallback_tgo)
        ep = EpisodeState(rng, entry, state, target, target.copy(), t_go, None, None, None)
        ep.targets.append(target.copy())
        self._record(ep, state, 0.0, GuidanceGains(float("nan"), float("nan")), t_go)
        self.episode = ep
        return self._observe(ep)

    # -- step ---------------------------------------------------------------

    def _record(self, ep, state, thrust_mag, gains, t_go):
        theta = glide_angle_to(state.r, ep.target)
        if not math.isnan(theta) and not theta <= ep.max_theta_g:
            ep.max_theta_g = theta
        ep.max_thrust = max(ep.max_thrust, thrust_mag)
        ep.log.record(state, thrust_mag, theta, epoch=ep.steps, t_go=t_go, k_r=gains.k_r, k_v=gains.k_v,
                      target_x=ep.target[0], target_y=ep.target[1],
                      fov_width=ep.frame.w_x if ep.frame is not None else float("nan"))

    def _fly(self, ep, duration, t_go_start, gains, terminal):
        """Integrate guided flight for ``duration`` seconds; returns a termination cause or None."""
        cfg = self.config
        vp = cfg.vehicle
        dt = cfg.inner_dt
        n_full = int(math.floor(duration / dt + 1e-9))
        spans = [dt] * n_full
        rest = duration - n_full * dt
        if rest > 1e-9:
            spans.append(rest)
        elapsed = 0.0
        for k, h in enumerate(spans):
            t_now = t_go_start - (k * dt)
            prev = ep.state
            zem, zev = zem_zev(prev.r, prev.v, ep.target, np.zeros(3), t_now, vp.gravity)
            accel = commanded_accel(zem, zev, gains, t_now, prev.m, vp.t_max)
            thrust = prev.m * accel
            mag = float(np.linalg.norm(thrust))
            if mag > vp.t_max:
                thrust *= vp.t_max / mag
            prop = propagate(prev, thrust, h, vp, ep.rng, cfg.thrust_error)
            new = prop.state
            elapsed += h
            if new.r[2] <= cfg.z_f:
                s = (prev.r[2] - cfg.z_f) / (prev.r[2] - new.r[2])
                r = prev.r + s * (new.r - prev.r)
                r[2] = cfg.z_f
                v = prev.v + s * (new.v - prev.v)
                m = prev.m + s * (new.m - prev.m)
                new = LanderState(r, v, m, prev.t + s * h)
                ep.state = new
                self._record(ep, new, float(np.linalg.norm(prop.thrust)), gains, t_now - s * h)
                if prop.fuel_exhausted and new.m <= vp.m_dry:
                    return "fuel_out"
                return "arrived" if terminal else "crash"
            ep.state = new
            self._record(ep, new, float(np.linalg.norm(prop.thrust)), gains, t_now - h)
            if prop.fuel_exhausted:
                return "fuel_out"
        return "arrived" if terminal else None

    def step(self, action: AgentAction) -> StepOutcome:
        ep = self.episode
        if ep is None or ep.done:
            raise EpisodeDoneError("episode is finished; call reset() first")
        cfg = self.config
        entry = ep.entry
        if action.target_override is not None:
            x0, x1, y0, y1 = entry.dem.bounds()
            new_xy = (_clamp(float(action.target_override[0]), x0, x1), _clamp(float(action.target_override[1]), y0, y1))
        else:
            new_xy = apply_target_shift(ep.target[:2], action.alpha_x, action.alpha_y, ep.frame.w_x, ep.frame.w_y,
                                        entry.dem.bounds())
        ep.target = np.array([new_xy[0], new_xy[1], cfg.z_f])
        ep.targets.append(ep.target.copy())
        ep.actions.append(action)
        gains = GuidanceGains(action.k_r, action.k_v)
        m_prev = ep.state.m
        ep.steps += 1

        if action.tgo_mode == "optimal":
            t_epoch = self._solve_tgo(ep.state, ep.target, ep.t_go)
            decrement = cfg.epoch
        elif action.tgo_mode == "agent":
            t_epoch = ep.t_go
            decrement = action.dtgo
        else:
            raise ValueError(f"unknown tgo_mode {action.tgo_mode!r}")

        if t_epoch <= cfg.terminal_tgo:
            cause = self._fly(ep, t_epoch, t_epoch, gains, terminal=True)
        else:
            cause = self._fly(ep, cfg.epoch, t_epoch, gains, terminal=False)
            if cause is None:
                t_next = t_epoch - decrement
                ep.t_go = t_next
                if t_next <= cfg.terminal_tgo:
                    cause = self._fly(ep, max(t_next, 0.0), t_next, gains, terminal=True)
                elif ep.steps >= cfg.max_steps:
                    cause = "timeout"
        done = cause is not None
        return self._finish_step(ep, m_prev, done, cause)

    def touchdown_safety(self, ep: EpisodeState = None) -> float:
        ep = ep or self.episode
        px = ep.entry.dem.nearest_pixel(ep.state.r[0], ep.state.r[1])
        if px is None:
            return -1.0
        return 1.0 if ep.entry.maps.v_d[px] >= 1 else -1.0

    def _finish_step(self, ep, m_prev, done, cause):
        cfg = self.config
        st = ep.state
        miss = math.hypot(st.r[0] - ep.target[0], st.r[1] - ep.target[1])
        speed = float(np.linalg.norm(st.v))
        v_d = self.touchdown_safety(ep) if done else 0.0
        ctx = RewardContext(m_prev, st.m, float(st.r[2]), speed, miss, done, cause == "crash", v_d)
        terms = reward_terms(ctx, cfg)
        reward = compute_reward(ctx, cfg)
        ep.rewards.append(reward)
        ep.components.append(terms)
        vp = cfg.vehicle
        ep.info = {
            "cause": cause,
            "v_d": v_d,
            "fuel_used": vp.m0 - st.m,
            "propellant_fraction": (vp.m0 - st.m) / (vp.m0 - vp.m_dry),
            "min_slant_angle": 90.0 - ep.max_theta_g,
            "max_thrust": ep.max_thrust,
            "miss_distance": miss,
            "final_speed": speed,
            "t_go": float(ep.t_go),
            "steps": ep.steps,
            "reward_terms": terms,
        }
        if done:
            ep.done = True
            ep.cause = cause
            obs = encode_observation(ep.frame, st, ep.target, ep.latent, vp)
            ep.observation = obs
        else:
            obs = self._observe(ep)
        return StepOutcome(obs, reward, done, dict(ep.info))
