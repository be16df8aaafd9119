"""TD3 agent over the landing environment: replay, twin critics, smoothing, delayed updates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .env import ACTION_DIM, OBS_DIM, scale_action
from .gridio import ensure_dir
from .neural import Adam, DenseNet, ShapeError

LOG_COLUMNS = ("update", "env_step", "episode", "critic_loss", "actor_objective", "mean_reward", "safe_ratio")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    expl_sigma: float = 0.1
    smooth_sigma: float = 0.2
    smooth_clip: float = 0.5
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    total_updates: int = 250_000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden: tuple = (256, 256)
    twin: bool = True
    window: int = 200  # episodes in the running reward / safe-ratio window
    log_every: int = 10  # updates between log rows
    checkpoint_every: int = 0  # updates between checkpoints, 0 disables

    def validate(self):
        if not 0 < self.gamma <= 1 or not 0 < self.tau <= 1:
            raise ValueError("need 0 < gamma <= 1 and 0 < tau <= 1")
        if self.policy_delay < 1 or self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("policy_delay, batch_size >= 1 and capacity >= batch_size required")
        return self


class Batch(NamedTuple):
    o: np.ndarray
    a: np.ndarray
    r: np.ndarray
    o2: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with FIFO eviction and uniform sampling."""

    def __init__(self, capacity, obs_dim=OBS_DIM, act_dim=ACTION_DIM):
        self.capacity = int(capacity)
        self.o = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros((self.capacity, act_dim))
        self.r = np.zeros(self.capacity)
        self.o2 = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, o, a, r, o2, done):
        if not math.isfinite(r):
            raise ValueError("reward must be finite")
        i = self.ptr
        self.o[i], self.a[i], self.r[i], self.o2[i], self.done[i] = o, a, r, o2, float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n, rng):
        if self.size < n:
            raise ValueError(f"buffer holds {self.size} transitions, need {n}")
        return rng.integers(0, self.size, n)

    def sample(self, n, rng) -> Batch:
        idx = self.sample_indices(n, rng)
        return Batch(self.o[idx], self.a[idx], self.r[idx], self.o2[idx], self.done[idx])

    def state_arrays(self):
        s = self.size
        return {"buf.o": self.o[:s], "buf.a": self.a[:s], "buf.r": self.r[:s], "buf.o2": self.o2[:s],
                "buf.done": self.done[:s], "buf.ptr": np.array(self.ptr)}

    def load_state_arrays(self, arrays):
        s = len(arrays["buf.r"])
        self.o[:s], self.a[:s], self.r[:s] = arrays["buf.o"], arrays["buf.a"], arrays["buf.r"]
        self.o2[:s], self.done[:s] = arrays["buf.o2"], arrays["buf.done"]
        self.size, self.ptr = s, int(arrays["buf.ptr"])


def select_action(actor: DenseNet, o, sigma, rng) -> np.ndarray:
    """Actor output plus Gaussian exploration noise, clipped to the unit box."""
    mu = actor(np.asarray(o, dtype=float))
    if sigma > 0:
        mu = mu + rng.normal(0.0, sigma, mu.shape)
    return np.clip(mu, 0.0, 1.0)


def _q(critic, o, a):
    return critic(np.concatenate([o, a], axis=-1))[..., 0]


def critic_target(batch: Batch, target_actor, target_critics, cfg: Td3Config, rng) -> np.ndarray:
    """Clipped double-Q bootstrap target with smoothed target actions."""
    a2 = target_actor(batch.o2)
    if cfg.smooth_sigma > 0:
        eps = np.clip(rng.normal(0.0, cfg.smooth_sigma, a2.shape), -cfg.smooth_clip, cfg.smooth_clip)
        a2 = a2 + eps
    a2 = np.clip(a2, 0.0, 1.0)
    q = np.min([_q(c, batch.o2, a2) for c in target_critics], axis=0)
    return batch.r + (1.0 - batch.done) * cfg.gamma * q


def update_critics(critics, optimizers, batch: Batch, y) -> float:
    """One Adam step per critic on the mean squared TD error; returns the pre-step loss sum."""
    x = np.concatenate([batch.o, batch.a], axis=-1)
    total = 0.0
    for critic, opt in zip(critics, optimizers):
        q, cache = critic.forward(x)
        diff = q[:, 0] - y
        total += float(np.mean(diff**2))
        grads, _ = critic.backward(cache, (2.0 / len(diff)) * diff[:, None])
        opt.step(grads)
    return total


def update_actor(actor: DenseNet, actor_opt: Adam, critic: DenseNet, batch: Batch) -> float:
    """Gradient ascent on mean Q(o, mu(o)); the critic is left untouched. Returns the pre-step objective."""
    a, a_cache = actor.forward(batch.o)
    q, q_cache = critic.forward(np.concatenate([batch.o, a], axis=-1))
    n = len(q)
    _, g_in = critic.backward(q_cache, np.full_like(q, -1.0 / n))
    grads, _ = actor.backward(a_cache, g_in[:, batch.o.shape[1]:])
    actor_opt.step(grads)
    return float(np.mean(q))


def soft_update(target: DenseNet, source: DenseNet, tau: float):
    """theta' <- tau * theta + (1 - tau) * theta', element-wise."""
    for tp, sp in zip(target.parameters(), source.parameters()):
        if tp.shape != sp.shape:
            raise ShapeError(f"cannot blend {sp.shape} into {tp.shape}")
        tp *= 1.0 - tau
        tp += tau * sp
    target.touch()


class Td3Agent:
    def __init__(self, cfg: Td3Config = None, rng=None, obs_dim=OBS_DIM, act_dim=ACTION_DIM):
        self.cfg = (cfg or Td3Config()).validate()
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        h = list(self.cfg.hidden)
        acts = ["relu"] * len(h)
        self.actor = DenseNet([obs_dim, *h, act_dim], acts + ["sigmoid"], rng)
        n_critics = 2 if self.cfg.twin else 1
        self.critics = [DenseNet([obs_dim + act_dim, *h, 1], acts + ["identity"], rng) for _ in range(n_critics)]
        self.target_actor = self.actor.copy()
        self.target_critics = [c.copy() for c in self.critics]
        self.actor_opt = Adam(self.actor, self.cfg.actor_lr)
        self.critic_opts = [Adam(c, self.cfg.critic_lr) for c in self.critics]
        self.updates = 0

    def act(self, o, sigma=0.0, rng=None):
        return select_action(self.actor, o, sigma, rng)

    def update(self, batch: Batch, rng) -> dict:
        cfg = self.cfg
        y = critic_target(batch, self.target_actor, self.target_critics, cfg, rng)
        out = {"critic_loss": update_critics(self.critics, self.critic_opts, batch, y), "actor_objective": None}
        self.updates += 1
        if self.updates % cfg.policy_delay == 0:
            out["actor_objective"] = update_actor(self.actor, self.actor_opt, self.critics[0], batch)
            soft_update(self.target_actor, self.actor, cfg.tau)
            for tc, c in zip(self.target_critics, self.critics):
                soft_update(tc, c, cfg.tau)
        return out

    def networks(self):
        nets = {"actor": self.actor, "target_actor": self.target_actor}
        for i, (c, tc) in enumerate(zip(self.critics, self.target_critics)):
            nets[f"critic{i}"] = c
            nets[f"target_critic{i}"] = tc
        return nets

    def save(self, directory, meta=None):
        d = ensure_dir(directory)
        for name, net in self.networks().items():
            net.save(d / f"{name}.json", meta)
        arrays = self.actor_opt.state_arrays("opt.actor")
        for i, opt in enumerate(self.critic_opts):
            arrays.update(opt.state_arrays(f"opt.critic{i}"))
        return arrays

    def load(self, directory, arrays=None):
        d = Path(directory)
        for name, net in self.networks().items():
            net.load_parameters(DenseNet.load(d / f"{name}.json").parameters())
        if arrays is not None:
            self.actor_opt.load_state_arrays(arrays, "opt.actor")
            for i, opt in enumerate(self.critic_opts):
                opt.load_state_arrays(arrays, f"opt.critic{i}")


def episode_seed(seed, index):
    """Seed for the ``index``-th episode of a run."""
    return np.random.SeedSequence([int(seed), 2, int(index)])


def is_safe_landing(info) -> bool:
    return info.get("cause") == "arrived" and info.get("v_d", -1.0) > 0


@dataclass
class TrainState:
    env_steps: int = 0
    episodes: int = 0
    critic_loss: float = float("nan")
    actor_objective: float = float("nan")
    recent_rewards: list = field(default_factory=list)
    recent_safe: list = field(default_factory=list)
    episode_rewards: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def write_log(path, rows, digest=""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS + ("config_digest",))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row] + [digest])


def save_checkpoint(directory, agent: Td3Agent, buffer: ReplayBuffer, rng, state: TrainState, digest=""):
    d = ensure_dir(directory)
    meta = {"config_digest": digest, "updates": agent.updates}
    arrays = agent.save(d, meta)
    arrays.update(buffer.state_arrays())
    np.savez(d / "state.npz", **arrays)
    doc = {
        "config_digest": digest,
        "updates": agent.updates,
        "rng": rng.bit_generator.state,
        "train_state": asdict(state),
        "td3_config": asdict(agent.cfg),
    }
    with open(d / "state.json", "w") as fh:
        json.dump(doc, fh)
    return d


def load_checkpoint(directory, agent: Td3Agent, buffer: ReplayBuffer, rng, digest=None) -> TrainState:
    d = Path(directory)
    with open(d / "state.json") as fh:
        doc = json.load(fh)
    if digest is not None and doc["config_digest"] != digest:
        raise ValueError("checkpoint was written under a different configuration")
    with np.load(d / "state.npz") as arrays:
        arrays = dict(arrays)
    agent.load(d, arrays)
    agent.updates = int(doc["updates"])
    buffer.load_state_arrays(arrays)
    rng.bit_generator.state = doc["rng"]
    return TrainState(**doc["train_state"])


def train(env_factory, cfg: Td3Config = None, seed=0, log_path=None, checkpoint_dir=None, digest="",
          resume=False, stop_after_updates=None):
    """Run TD3 until ``cfg.total_updates`` gradient updates have been made.

    Args:
        env_factory: zero-argument callable returning a fresh environment.
        log_path: optional CSV written with ``LOG_COLUMNS`` rows.
        checkpoint_dir: where resumable checkpoints go (every ``cfg.checkpoint_every``
            updates, at the next episode boundary).
        resume: continue from the checkpoint in ``checkpoint_dir``.
        stop_after_updates: return early once this many updates are done
            (at an episode boundary); used to emulate an interruption.

    Returns:
        (agent, log rows)
    """
    cfg = (cfg or Td3Config()).validate()
    env = env_factory()
    agent = Td3Agent(cfg, np.random.default_rng(np.random.SeedSequence([int(seed), 0])))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    buffer = ReplayBuffer(cfg.buffer_capacity)
    st = TrainState()
    if resume:
        if checkpoint_dir is None or not (Path(checkpoint_dir) / "state.json").exists():
            raise FileNotFoundError(f"no checkpoint to resume from in {checkpoint_dir}")
        st = load_checkpoint(checkpoint_dir, agent, buffer, rng, digest)
    next_ckpt = (agent.updates // cfg.checkpoint_every + 1) * cfg.checkpoint_every if cfg.checkpoint_every else None

    while agent.updates < cfg.total_updates:
        obs = env.reset(episode_seed(seed, st.episodes))
        ep_reward = 0.0
        while True:
            if st.env_steps < cfg.warmup_steps:
                a = rng.random(ACTION_DIM)
            else:
                a = select_action(agent.actor, obs, cfg.expl_sigma, rng)
            out = env.step(scale_action(a, env.config))
            buffer.add(obs, a, out.reward, out.observation, out.done)
            st.env_steps += 1
            ep_reward += out.reward
            obs = out.observation
            if st.env_steps > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
                stats = agent.update(buffer.sample(cfg.batch_size, rng), rng)
                st.critic_loss = stats["critic_loss"]
                if stats["actor_objective"] is not None:
                    st.actor_objective = stats["actor_objective"]
                objective = stats["actor_objective"]
                if not math.isfinite(st.critic_loss) or (objective is not None and not math.isfinite(objective)):
                    if checkpoint_dir is not None:
                        save_checkpoint(Path(checkpoint_dir) / "diverged", agent, buffer, rng, st, digest)
                    raise TrainingDivergedError(f"non-finite loss at update {agent.updates}")
                if agent.updates % cfg.log_every == 0:
                    st.rows.append(_log_row(agent, st))
                if agent.updates >= cfg.total_updates:
                    break
            if out.done:
                break
        if out.done:
            st.episodes += 1
            st.episode_rewards.append(ep_reward)
            st.recent_rewards = (st.recent_rewards + [ep_reward])[-cfg.window:]
            st.recent_safe = (st.recent_safe + [1.0 if is_safe_landing(out.info) else 0.0])[-cfg.window:]
        if next_ckpt is not None and agent.updates >= next_ckpt and checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, agent, buffer, rng, st, digest)
            if log_path is not None:
                write_log(log_path, st.rows, digest)
            next_ckpt = (agent.updates // cfg.checkpoint_every + 1) * cfg.checkpoint_every
        if stop_after_updates is not None and agent.updates >= stop_after_updates:
            break
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, agent, buffer, rng, st, digest)
    if log_path is not None:
        write_log(log_path, st.rows, digest)
    agent.train_state = st
    return agent, st.rows


def _log_row(agent, st: TrainState):
    mean_r = float(np.mean(st.recent_rewards)) if st.recent_rewards else float("nan")
    safe = float(np.mean(st.recent_safe)) if st.recent_safe else float("nan")
    return [agent.updates, st.env_steps, st.episodes, float(st.critic_loss), float(st.actor_objective), mean_r, safe]
