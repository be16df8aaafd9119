"""Comparison policies and the seeded evaluation harness."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import AgentAction, LandingEnv, scale_action
from .gridio import ensure_dir
from .td3 import is_safe_landing

log = logging.getLogger(__name__)

DIVERT_ALTITUDE = 500.0  # m

METRICS = ("safe_landing", "miss_distance", "final_speed", "propellant_used", "min_slant_angle", "max_thrust")
HISTOGRAM_EDGES = {
    "safe_landing": np.array([0.0, 0.5, 1.0]),
    "miss_distance": np.linspace(0.0, 20.0, 21),
    "final_speed": np.linspace(0.0, 5.0, 21),
    "propellant_used": np.linspace(0.0, 1.0, 21),
    "min_slant_angle": np.linspace(0.0, 90.0, 19),
    "max_thrust": np.linspace(0.0, 12000.0, 25),
}
TABLE_HEADER = ("policy", "safe_landing_%", "distance_m", "final_velocity_m_s", "propellant_%",
                "min_slant_deg", "max_thrust_N")


class Policy:
    """Maps (env, observation) to an :class:`AgentAction` or a unit-box 5-vector."""

    name = "policy"

    def begin(self, env: LandingEnv, seed):
        pass

    def __call__(self, env: LandingEnv, obs):
        raise NotImplementedError


class ActorPolicy(Policy):
    name = "agent"

    def __init__(self, actor):
        self.actor = actor

    def __call__(self, env, obs):
        return self.actor(obs)


class RandomPolicy(Policy):
    """Uniform unit-box actions from a stream seeded per episode."""

    name = "random"

    def begin(self, env, seed):
        self.rng = np.random.default_rng(np.random.SeedSequence([*_entropy(seed), 7]))

    def __call__(self, env, obs):
        return self.rng.random(5)


class MidpointPolicy(Policy):
    name = "midpoint"

    def __call__(self, env, obs):
        return np.full(5, 0.5)


def _entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        ent = seed.entropy
        ent = [ent] if isinstance(ent, int) else list(ent)
        return ent + list(seed.spawn_key)
    return [int(seed)]


class FixedControlPolicy(Policy):
    """Energy-optimal gains and re-solved t_go; only the target shift comes from the actor.

    With ``actor=None`` the shift is zero (no divert).
    """

    name = "fixed"

    def __init__(self, actor=None):
        self.actor = actor

    def __call__(self, env, obs):
        mid = 0.5 * sum(env.config.dtgo_range)
        ax = ay = 0.0
        if self.actor is not None:
            shift = scale_action(np.clip(self.actor(obs), 0.0, 1.0), env.config)
            ax, ay = shift.alpha_x, shift.alpha_y
        return AgentAction(6.0, 2.0, mid, ax, ay, tgo_mode="optimal")


def argmax_pixel(frame, current_target):
    """World (x, y) of the highest-valued observation pixel.

    Ties go to the pixel nearest ``current_target``, then to row-major order.
    """
    o_p = frame.o_p
    xs, ys = frame.pixel_centers()
    best = o_p == o_p.max()
    dist = np.where(best, np.hypot(xs - current_target[0], ys - current_target[1]), np.inf)
    k = int(np.argmin(dist))
    row, col = divmod(k, o_p.shape[1])
    return float(xs[row, col]), float(ys[row, col])


class SingleDivertPolicy(Policy):
    """Fly to the initial target, divert once to the best observed pixel below ``altitude``."""

    name = "single"

    def __init__(self, altitude=DIVERT_ALTITUDE):
        self.altitude = altitude

    def begin(self, env, seed):
        self.divert_target = None

    def __call__(self, env, obs):
        ep = env.episode
        mid = 0.5 * sum(env.config.dtgo_range)
        if self.divert_target is None and ep.state.r[2] < self.altitude:
            self.divert_target = argmax_pixel(ep.frame, ep.target)
        return AgentAction(6.0, 2.0, mid, 0.0, 0.0, tgo_mode="optimal", target_override=self.divert_target)


@dataclass
class EpisodeResult:
    seed_index: int
    safe_landing: bool
    miss_distance: float
    final_speed: float
    propellant_used: float
    min_slant_angle: float
    max_thrust: float
    total_reward: float
    cause: str
    steps: int
    target_changes: int
    gains: list = field(default_factory=list, repr=False)

    def row(self):
        return {
            "seed_index": self.seed_index, "safe_landing": int(self.safe_landing),
            "miss_distance": self.miss_distance, "final_speed": self.final_speed,
            "propellant_used": self.propellant_used, "min_slant_angle": self.min_slant_angle,
            "max_thrust": self.max_thrust, "total_reward": self.total_reward, "cause": self.cause,
            "steps": self.steps, "target_changes": self.target_changes,
        }


def _to_action(policy_out, env):
    if isinstance(policy_out, AgentAction):
        return policy_out
    unit = np.asarray(policy_out, dtype=float)
    if np.any(unit < 0) or np.any(unit > 1):
        log.warning("policy emitted an action outside the unit box; clipping %s", unit)
        unit = np.clip(unit, 0.0, 1.0)
    return scale_action(unit, env.config)


def run_episode(policy: Policy, env: LandingEnv, seed, seed_index=0, log_path=None, extra_columns=None) -> EpisodeResult:
    """Roll one full episode and collect the evaluation metrics."""
    obs = env.reset(seed)
    policy.begin(env, seed)
    total = 0.0
    while True:
        out = env.step(_to_action(policy(env, obs), env))
        total += out.reward
        obs = out.observation
        if out.done:
            break
    ep = env.episode
    vp = env.config.vehicle
    moves = sum(1 for a, b in zip(ep.targets[:-1], ep.targets[1:]) if not np.array_equal(a, b))
    if log_path is not None:
        if extra_columns:
            for row in ep.log.rows:
                row.update(extra_columns)
        ep.log.write_csv(log_path)
    theta = ep.max_theta_g
    return EpisodeResult(
        seed_index=seed_index,
        safe_landing=is_safe_landing(out.info),
        miss_distance=out.info["miss_distance"],
        final_speed=out.info["final_speed"],
        propellant_used=(vp.m0 - ep.state.m) / (vp.m0 - vp.m_dry),
        min_slant_angle=90.0 if math.isnan(theta) else 90.0 - theta,
        max_thrust=ep.max_thrust,
        total_reward=total,
        cause=ep.cause,
        steps=ep.steps,
        target_changes=moves,
        gains=[(a.k_r, a.k_v) for a in ep.actions],
    )


def eval_seeds(seed, n):
    """Per-episode seeds shared by every policy evaluated under the same base seed."""
    return [np.random.SeedSequence([int(seed), 3, k]) for k in range(n)]


@dataclass
class EvalSummary:
    policy: str
    n_episodes: int
    means: dict
    histograms: dict
    results: list
    config_digest: str = ""

    def table_row(self):
        m = self.means
        return (self.policy, 100.0 * m["safe_landing"], m["miss_distance"], m["final_speed"],
                100.0 * m["propellant_used"], m["min_slant_angle"], m["max_thrust"])


def histogram(values, edges):
    clipped = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
    counts, _ = np.histogram(clipped, bins=edges)
    return counts


def summarize(policy_name, results, digest="") -> EvalSummary:
    means = {k: float(np.mean([float(getattr(r, k)) for r in results])) for k in METRICS}
    means["total_reward"] = float(np.mean([r.total_reward for r in results]))
    hists = {k: (HISTOGRAM_EDGES[k], histogram([float(getattr(r, k)) for r in results], HISTOGRAM_EDGES[k]))
             for k in METRICS}
    return EvalSummary(policy_name, len(results), means, hists, results, digest)


def evaluate(policy: Policy, env: LandingEnv, n_episodes, seed=0, difficulty=None, order=None,
             digest="") -> EvalSummary:
    """Run ``n_episodes`` seeded episodes and aggregate the six metrics.

    Args:
        difficulty: overrides the environment's target-selection mode.
        order: optional execution order (a permutation of episode indices);
            results are always reported in seed order.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    if difficulty is not None and difficulty != env.config.difficulty:
        env = LandingEnv(replace(env.config, difficulty=difficulty), env.library, env.encoder)
    seeds = eval_seeds(seed, n_episodes)
    order = range(n_episodes) if order is None else order
    results = {}
    for k in order:
        results[k] = run_episode(policy, env, seeds[k], seed_index=k)
    return summarize(policy.name, [results[k] for k in range(n_episodes)], digest)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_summary(summary: EvalSummary, out_dir):
    """Emit ``episodes.csv``, ``eval_summary.csv`` and one histogram CSV per metric."""
    out = ensure_dir(out_dir)
    with open(out / "episodes.csv", "w", newline="") as fh:
        cols = list(summary.results[0].row()) + ["policy", "config_digest"]
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in summary.results:
            w.writerow({**{k: _fmt(v) for k, v in r.row().items()}, "policy": summary.policy,
                        "config_digest": summary.config_digest})
    with open(out / "eval_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "metric", "mean", "n_episodes", "config_digest"])
        for k, v in summary.means.items():
            w.writerow([summary.policy, k, _fmt(v), summary.n_episodes, summary.config_digest])
    for k, (edges, counts) in summary.histograms.items():
        with open(out / f"hist_{k}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count", "config_digest"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([_fmt(lo), _fmt(hi), int(c), summary.config_digest])
    return Path(out)


def format_table_row(summary: EvalSummary) -> str:
    vals = summary.table_row()
    head = "  ".join(f"{h:>18}" for h in TABLE_HEADER)
    body = f"{vals[0]:>18}  " + "  ".join(f"{v:>18.4f}" for v in vals[1:])
    return head + "\n" + body


def collect_maps(env: LandingEnv, n_rollouts, seed=0):
    """Observation maps from ``n_rollouts`` uniform-random-action episodes."""
    policy = RandomPolicy()
    maps = []
    for k in range(n_rollouts):
        run_episode(policy, env, np.random.SeedSequence([int(seed), 5, k]), seed_index=k)
        maps.extend(f.o_p for f in env.episode.frames)
    return np.array(maps)
