import csv

import numpy as np
import pytest
from scipy import stats

from hdaland.env import EnvConfig, LandingEnv
from hdaland.neural import Adam, DenseNet, ShapeError
from hdaland.td3 import (
    LOG_COLUMNS,
    Batch,
    ReplayBuffer,
    Td3Agent,
    Td3Config,
    TrainingDivergedError,
    critic_target,
    select_action,
    soft_update,
    train,
    update_actor,
    update_critics,
)

TINY = Td3Config(batch_size=16, buffer_capacity=2000, warmup_steps=40, total_updates=60, hidden=(16, 16),
                 log_every=5, window=20, checkpoint_every=20)


def constant_critic(value, in_dim=49):
    return DenseNet([in_dim, 1], "identity", weights=[np.zeros((in_dim, 1))], biases=[np.array([value])])


def random_batch(rng, n=8, done=0.0):
    return Batch(rng.normal(size=(n, 44)), rng.random((n, 5)), np.ones(n), rng.normal(size=(n, 44)),
                 np.full(n, done))


def test_select_action_noise_and_clip():
    rng = np.random.default_rng(0)
    actor = DenseNet([44, 5], "sigmoid", weights=[np.zeros((44, 5))], biases=[np.zeros(5)])
    o = rng.normal(size=44)
    assert select_action(actor, o, 0.0, rng).tolist() == [0.5] * 5
    samples = np.array([select_action(actor, o, 0.1, rng) for _ in range(20000)])
    assert samples.size == 100_000
    assert np.std(samples - 0.5) == pytest.approx(0.1, rel=0.05)
    high = DenseNet([44, 5], "identity", weights=[np.zeros((44, 5))], biases=[np.full(5, 0.99)])
    assert np.all(select_action(high, o, 5.0, np.random.default_rng(1))[...] <= 1.0)


def test_critic_target_examples():
    rng = np.random.default_rng(1)
    cfg = Td3Config()
    actor = DenseNet([44, 5], "sigmoid", rng)
    q1, q2 = constant_critic(2.0), constant_critic(3.0)
    y = critic_target(random_batch(rng), actor, [q1, q2], cfg, rng)
    assert np.allclose(y, 2.98, rtol=0, atol=1e-12)
    y = critic_target(random_batch(rng, done=1.0), actor, [q1, q2], cfg, rng)
    assert np.all(y == 1.0)


def test_min_critic_property():
    rng = np.random.default_rng(2)
    cfg = Td3Config()
    actor = DenseNet([44, 8, 5], ["relu", "sigmoid"], rng)
    c1 = DenseNet([49, 8, 1], ["tanh", "identity"], rng)
    c2 = DenseNet([49, 8, 1], ["tanh", "identity"], rng)
    batch = random_batch(rng, 64)
    y = critic_target(batch, actor, [c1, c2], cfg, np.random.default_rng(9))
    for single in (c1, c2):
        assert np.all(y <= critic_target(batch, actor, [single], cfg, np.random.default_rng(9)) + 1e-15)


def test_degenerate_target_is_ddpg():
    rng = np.random.default_rng(3)
    cfg = Td3Config(smooth_sigma=0.0)
    actor = DenseNet([44, 8, 5], ["relu", "sigmoid"], rng)
    c = DenseNet([49, 8, 1], ["tanh", "identity"], rng)
    batch = random_batch(rng, 16)
    y = critic_target(batch, actor, [c, c.copy()], cfg, rng)
    q = c(np.concatenate([batch.o2, actor(batch.o2)], axis=1))[:, 0]
    assert np.allclose(y, batch.r + cfg.gamma * q, rtol=0, atol=1e-14)


def test_update_critics_fixed_point_and_convergence():
    rng = np.random.default_rng(4)
    critic = DenseNet([49, 16, 1], ["tanh", "identity"], rng)
    opt = Adam(critic, 3e-4)
    batch = random_batch(rng, 1)
    x = np.concatenate([batch.o, batch.a], axis=1)
    before = [p.copy() for p in critic.parameters()]
    assert update_critics([critic], [opt], batch, critic(x)[:, 0]) == 0.0
    assert all(np.array_equal(a, b) for a, b in zip(before, critic.parameters()))
    losses = [update_critics([critic], [opt], batch, np.array([1.5])) for _ in range(300)]
    assert all(l >= 0 for l in losses)
    # monotone on the way down; near zero Adam's momentum overshoots and rings
    first_small = next(i for i, l in enumerate(losses) if l < 1e-4 * losses[0])
    approach = losses[:first_small + 1]
    assert all(b <= a for a, b in zip(approach, approach[1:]))
    assert losses[-1] < 1e-3 * losses[0]


class QuadraticBowl:
    """Q(o, a) = -(a - 0.7)^2 for a one-dimensional action; o is ignored."""

    version = 0

    def __init__(self, obs_dim):
        self.obs_dim = obs_dim

    def forward(self, x):
        a = x[:, self.obs_dim:]
        return -((a - 0.7) ** 2), a

    def backward(self, cache, grad_out):
        g_in = np.zeros((len(cache), self.obs_dim + 1))
        g_in[:, self.obs_dim:] = grad_out * (-2.0 * (cache - 0.7))
        return None, g_in


def test_actor_converges_on_quadratic_bowl():
    actor = DenseNet([1, 1], "sigmoid", weights=[[[0.3]]], biases=[[-1.0]])
    opt = Adam(actor, 1e-2)
    batch = Batch(np.ones((4, 1)), None, None, None, None)
    for _ in range(3000):
        update_actor(actor, opt, QuadraticBowl(1), batch)
    assert actor(np.ones(1))[0] == pytest.approx(0.7, abs=1e-3)


def test_actor_unchanged_when_critic_ignores_action():
    rng = np.random.default_rng(5)
    actor = DenseNet([44, 8, 5], ["relu", "sigmoid"], rng)
    critic = DenseNet([49, 8, 1], ["tanh", "identity"], rng)
    critic.weights[0][44:] = 0.0
    before = [p.copy() for p in actor.parameters()]
    update_actor(actor, Adam(actor), critic, random_batch(rng, 16))
    assert all(np.array_equal(a, b) for a, b in zip(before, actor.parameters()))


def test_actor_objective_increases_on_frozen_critic():
    rng = np.random.default_rng(6)
    actor = DenseNet([44, 16, 5], ["relu", "sigmoid"], rng)
    critic = DenseNet([49, 16, 1], ["tanh", "identity"], rng)
    frozen = [p.copy() for p in critic.parameters()]
    opt = Adam(actor, 1e-3)
    batch = random_batch(rng, 32)
    obj = [update_actor(actor, opt, critic, batch) for _ in range(100)]
    assert obj[-1] > obj[0]
    assert all(np.array_equal(a, b) for a, b in zip(frozen, critic.parameters()))


def test_soft_update_examples():
    ones = DenseNet([2, 2], "identity", weights=[np.ones((2, 2))], biases=[np.ones(2)])
    zeros = DenseNet([2, 2], "identity", weights=[np.zeros((2, 2))], biases=[np.zeros(2)])
    t = zeros.copy()
    soft_update(t, ones, 0.005)
    assert np.all(t.weights[0] == 0.005) and np.all(t.biases[0] == 0.005)
    soft_update(t, ones, 0.0)
    assert np.all(t.weights[0] == 0.005)
    soft_update(t, ones, 1.0)
    assert np.all(t.weights[0] == 1.0)
    with pytest.raises(ShapeError):
        soft_update(t, DenseNet([2, 3], "identity", np.random.default_rng(0)), 0.5)


def test_replay_fifo_and_uniform_sampling():
    buf = ReplayBuffer(10, obs_dim=1, act_dim=1)
    for i in range(15):
        buf.add([i], [0.0], float(i), [i + 1], False)
    assert len(buf) == 10
    assert sorted(buf.r.tolist()) == list(range(5, 15))
    with pytest.raises(ValueError):
        ReplayBuffer(4, 1, 1).sample(2, np.random.default_rng(0))
    g = np.random.default_rng(7)
    idx = np.concatenate([buf.sample_indices(10, g) for _ in range(10_000)])
    counts = np.bincount(idx, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.01
    with pytest.raises(ValueError):
        buf.add([0], [0], float("nan"), [0], False)


def test_ddpg_regression():
    cfg = Td3Config(policy_delay=1, smooth_sigma=0.0, twin=False, hidden=(8,))
    agent = Td3Agent(cfg, np.random.default_rng(8))
    rng = np.random.default_rng(9)
    batch = random_batch(rng, 16)
    actor, critic = agent.actor.copy(), agent.critics[0].copy()
    t_actor, t_critic = agent.target_actor.copy(), agent.target_critics[0].copy()

    # textbook DDPG step written out long-hand
    q_next = t_critic(np.concatenate([batch.o2, t_actor(batch.o2)], axis=1))[:, 0]
    y = batch.r + cfg.gamma * (1 - batch.done) * q_next
    q, cache = critic.forward(np.concatenate([batch.o, batch.a], axis=1))
    g, _ = critic.backward(cache, 2.0 * (q - y[:, None]) / len(y))
    Adam(critic, cfg.critic_lr).step(g)
    a, a_cache = actor.forward(batch.o)
    q, q_cache = critic.forward(np.concatenate([batch.o, a], axis=1))
    _, g_in = critic.backward(q_cache, np.full_like(q, -1.0 / len(q)))
    g, _ = actor.backward(a_cache, g_in[:, 44:])
    Adam(actor, cfg.actor_lr).step(g)
    for tgt, src in ((t_actor, actor), (t_critic, critic)):
        for tp, sp in zip(tgt.parameters(), src.parameters()):
            tp[...] = cfg.tau * sp + (1 - cfg.tau) * tp

    agent.update(batch, np.random.default_rng(0))
    for mine, ref in ((agent.actor, actor), (agent.critics[0], critic), (agent.target_actor, t_actor),
                      (agent.target_critics[0], t_critic)):
        for p, r in zip(mine.parameters(), ref.parameters()):
            assert np.allclose(p, r, rtol=0, atol=1e-15)


def easy_env_factory(library):
    return lambda: LandingEnv(EnvConfig(), library)


def test_log_schema_and_determinism(easy_library, tmp_path):
    assert {"critic_loss", "actor_objective", "mean_reward", "safe_ratio"} <= set(LOG_COLUMNS)
    train(easy_env_factory(easy_library), TINY, seed=3, log_path=tmp_path / "a.csv")
    train(easy_env_factory(easy_library), TINY, seed=3, log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0][:len(LOG_COLUMNS)]) == LOG_COLUMNS
    assert int(rows[-1][0]) == 60


def test_resume_matches_uninterrupted_run(easy_library, tmp_path):
    full, full_rows = train(easy_env_factory(easy_library), TINY, seed=4)
    train(easy_env_factory(easy_library), TINY, seed=4, checkpoint_dir=tmp_path / "ck", stop_after_updates=25)
    resumed, rows = train(easy_env_factory(easy_library), TINY, seed=4, checkpoint_dir=tmp_path / "ck",
                          resume=True)
    assert rows == full_rows
    for p, q in zip(full.actor.parameters(), resumed.actor.parameters()):
        assert p.tobytes() == q.tobytes()


class ExplodingEnv:
    """Wraps a landing env and inflates rewards until the critic loss overflows."""

    def __init__(self, env):
        self.env = env
        self.config = env.config

    def reset(self, seed):
        return self.env.reset(seed)

    def step(self, action):
        out = self.env.step(action)
        out.reward = 1e200
        return out


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_divergence_aborts_with_checkpoint(easy_library, tmp_path):
    with pytest.raises(TrainingDivergedError):
        train(lambda: ExplodingEnv(LandingEnv(EnvConfig(), easy_library)), TINY, seed=0,
              checkpoint_dir=tmp_path / "ck")
    assert (tmp_path / "ck" / "diverged" / "state.json").exists()
