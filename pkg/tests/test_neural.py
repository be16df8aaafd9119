import warnings

import numpy as np
import pytest

from hdaland.neural import (
    Adam,
    AutoencoderConfig,
    AutoencoderModel,
    DenseNet,
    OptimizerState,
    ShapeError,
    UsageError,
    adam_step,
    train_autoencoder,
)

FD_STEP = 1e-5
PROBES = 100


def relative_error(a, b, floor=1e-10):
    scale = max(abs(a), abs(b))
    return 0.0 if scale < floor else abs(a - b) / scale


def fd_check(loss, analytic, arrays, rng, probes=PROBES, step=FD_STEP):
    """Central differences on randomly chosen entries of ``arrays``; returns the worst relative error."""
    sizes = np.array([a.size for a in arrays])
    worst = 0.0
    for _ in range(probes):
        k = rng.choice(len(arrays), p=sizes / sizes.sum())
        idx = np.unravel_index(rng.integers(arrays[k].size), arrays[k].shape)
        old = arrays[k][idx]
        arrays[k][idx] = old + step
        up = loss()
        arrays[k][idx] = old - step
        down = loss()
        arrays[k][idx] = old
        worst = max(worst, relative_error(analytic[k][idx], (up - down) / (2 * step)))
    return worst


def check_net(sizes, acts, batch, seed):
    rng = np.random.default_rng(seed)
    net = DenseNet(sizes, acts, rng)
    x = rng.normal(size=(batch, sizes[0]))
    proj = rng.normal(size=(batch, sizes[-1]))
    out, cache = net.forward(x)
    grads, g_in = net.backward(cache, proj)

    def loss():
        return float(np.sum(proj * net(x)))

    worst = fd_check(loss, grads, net.parameters(), rng)
    worst_in = fd_check(loss, [g_in], [x], rng, probes=20)
    return max(worst, worst_in)


@pytest.mark.parametrize("sizes, acts", [
    ([3, 7, 5, 2], ["tanh", "relu", "sigmoid"]),
    ([44, 256, 256, 5], ["relu", "relu", "sigmoid"]),
    ([49, 256, 256, 1], ["relu", "relu", "identity"]),
    ([4096, 512, 128, 32], ["relu", "relu", "identity"]),
    ([32, 128, 512, 4096], ["relu", "relu", "sigmoid"]),
])
def test_finite_difference_gradients(sizes, acts):
    assert check_net(sizes, acts, batch=4, seed=sum(sizes)) < 1e-4


def test_autoencoder_chain_gradient():
    rng = np.random.default_rng(1)
    model = AutoencoderModel.build(rng=rng)
    x = rng.random((3, 4096))
    z, ec = model.encoder.forward(x)
    y, dc = model.decoder.forward(z)
    diff = y - x
    g_dec, g_z = model.decoder.backward(dc, 2.0 * diff / diff.size)
    g_enc, _ = model.encoder.backward(ec, g_z)
    params = model.encoder.parameters() + model.decoder.parameters()

    def loss():
        return model.loss(x)

    # MSE over 12k outputs leaves entries near 1e-9, where a 1e-5 step is roundoff-bound
    assert fd_check(loss, g_enc + g_dec, params, rng, step=1e-3) < 1e-4


def test_forward_examples():
    net = DenseNet([3, 3], "identity", weights=[np.eye(3)], biases=[np.zeros(3)])
    assert net(np.array([1.0, -2.0, 3.5])).tolist() == [1.0, -2.0, 3.5]
    b = np.array([-1.0, 0.0, 2.0])
    net = DenseNet([2, 3], "sigmoid", weights=[np.zeros((2, 3))], biases=[b])
    assert np.allclose(net(np.array([5.0, -4.0])), 1 / (1 + np.exp(-b)))
    net = DenseNet([3, 16, 16, 2], ["tanh", "relu", "sigmoid"], np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(-10, 10, (1000, 3))
    assert np.all(np.isfinite(net(x)))
    assert np.all(np.isfinite(DenseNet([1, 1], "sigmoid", weights=[[[1.0]]], biases=[[0.0]])(np.array([[-800.0], [800.0]]))))


def test_shape_errors():
    net = DenseNet([3, 2], "relu", np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net(np.zeros(4))
    with pytest.raises(ShapeError):
        DenseNet([3, 2], "relu", weights=[np.zeros((2, 3))], biases=[np.zeros(2)])


def test_backward_zero_linearity_and_stale_cache():
    rng = np.random.default_rng(2)
    net = DenseNet([5, 8, 3], ["tanh", "identity"], rng)
    x = rng.normal(size=(6, 5))
    g = rng.normal(size=(6, 3))
    _, cache = net.forward(x)
    zero, _ = net.backward(cache, np.zeros((6, 3)))
    assert all(not z.any() for z in zero)
    one, _ = net.backward(cache, g)
    two, _ = net.backward(cache, 2 * g)
    assert all(np.allclose(b, 2 * a, rtol=1e-14, atol=0) for a, b in zip(one, two))
    Adam(net).step(one)
    with pytest.raises(UsageError):
        net.backward(cache, g)


def test_adam_examples():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = OptimizerState(lr=1e-3)
    adam_step(p, [np.zeros(3)], opt)
    assert p[0].tolist() == [1.0, -2.0, 3.0]

    p = [np.zeros(3)]
    g = np.array([0.5, -3.0, 1e-3])
    adam_step(p, [g], OptimizerState(lr=1e-3))
    assert np.allclose(p[0], -1e-3 * np.sign(g), rtol=0, atol=1e-3 * 1e-4)

    p = [np.zeros(2)]
    opt = OptimizerState(lr=1e-3)
    prev = p[0].copy()
    for _ in range(5000):
        adam_step(p, [np.array([2.0, -0.1])], opt)
        step = p[0] - prev
        prev = p[0].copy()
    assert np.allclose(np.abs(step), 1e-3, rtol=1e-4)


def test_network_round_trip(tmp_path):
    net = DenseNet([44, 256, 256, 5], ["relu", "relu", "sigmoid"], np.random.default_rng(4))
    net.save(tmp_path / "a.json", meta={"role": "actor"})
    back = DenseNet.load(tmp_path / "a.json")
    x = np.random.default_rng(5).normal(size=(10, 44))
    assert net(x).tobytes() == back(x).tobytes()
    assert back.meta == {"role": "actor"}


def test_autoencoder_round_trip_and_encode(tmp_path):
    model = AutoencoderModel.build(AutoencoderConfig(seed=3))
    with pytest.warns(UserWarning):
        model.encode(np.zeros((64, 64)))
    model.trained = True
    model.save(tmp_path / "ae.json")
    back = AutoencoderModel.load(tmp_path / "ae.json")
    m = np.random.default_rng(6).random((64, 64))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        z = back.encode(m)
    assert z.shape == (32,)
    assert z.tobytes() == model.encode(m.copy()).tobytes()
    assert back.encode(np.stack([m, m])).shape == (2, 32)


def test_constant_map_is_memorised():
    cfg = AutoencoderConfig(batch_size=1, epochs=500, max_steps=500, val_fraction=0.0, seed=0)
    model, hist = train_autoencoder([np.full((64, 64), 0.3)], cfg)
    assert hist["steps"] == 500
    assert model.loss(np.full((64, 64), 0.3)) < 1e-3


def test_training_is_deterministic_and_separates_extremes():
    rng = np.random.default_rng(7)
    data = np.concatenate([rng.random((40, 64, 64)), np.zeros((10, 64, 64)), np.ones((10, 64, 64))])
    cfg = AutoencoderConfig(batch_size=16, epochs=20, seed=1)
    a, ha = train_autoencoder(data, cfg)
    b, hb = train_autoencoder(data, cfg)
    assert ha == hb
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.encoder.parameters(), b.encoder.parameters()))
    assert np.linalg.norm(a.encode(np.ones((64, 64))) - a.encode(np.zeros((64, 64)))) > 0.1


def test_autoencoder_input_checks():
    with pytest.raises(UsageError):
        train_autoencoder(np.zeros((0, 64, 64)))
    with pytest.raises(ValueError):
        train_autoencoder(np.full((2, 64, 64), 1.5))
