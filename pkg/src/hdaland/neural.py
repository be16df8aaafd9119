"""Small dense-network toolkit in numpy: layers, backprop, Adam, checkpoints, autoencoder.

Arrays are batched row-wise: a layer maps ``(N, fan_in) -> (N, fan_out)`` via
``x @ W + b``.  Gradients returned by :meth:`DenseNet.backward` are exact
reverse-mode derivatives of ``sum(output * grad_out)``; callers fold any
batch averaging into ``grad_out``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "hdaland-densenet"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_ACT = {
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
}


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    post: list
    version: int
    squeeze: bool


class DenseNet:
    """Fully connected network with per-layer activations."""

    def __init__(self, sizes, activations, rng=None, weights=None, biases=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ShapeError("need at least an input and an output size")
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 1)
        activations = list(activations)
        if len(activations) != len(sizes) - 1:
            raise ShapeError("one activation per layer required")
        for name in activations:
            if name not in _ACT:
                raise ValueError(f"unknown activation {name!r}")
        self.sizes = sizes
        self.activations = activations
        if weights is None:
            rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
            weights, biases = [], []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                biases.append(rng.uniform(-bound, bound, fan_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for w, b, fi, fo in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ShapeError(f"parameter shapes {w.shape}, {b.shape} do not chain {fi}->{fo}")
        self.version = 0

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def touch(self):
        """Mark parameters as modified; invalidates outstanding caches."""
        self.version += 1

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, self.activations,
                        weights=[w.copy() for w in self.weights], biases=[b.copy() for b in self.biases])

    def load_parameters(self, params):
        for dst, src in zip(self.parameters(), params):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src
        self.touch()

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"input width {x.shape[-1]} != {self.in_dim}")
        inputs, pre, post = [], [], []
        a = x
        for w, b, name in zip(self.weights, self.biases, self.activations):
            inputs.append(a)
            z = a @ w + b
            a = _ACT[name][0](z)
            pre.append(z)
            post.append(a)
        out = a[0] if squeeze else a
        return out, ForwardCache(inputs, pre, post, self.version, squeeze)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, grad_out):
        """Parameter gradients (same layout as :meth:`parameters`) and input gradient."""
        if cache.version != self.version:
            raise UsageError("forward cache is stale: parameters changed since the forward pass")
        g = np.asarray(grad_out, dtype=float)
        if cache.squeeze:
            g = g[None, :]
        grads = [None] * (2 * len(self.weights))
        for k in reversed(range(len(self.weights))):
            z, a = cache.pre[k], cache.post[k]
            dz = g * _ACT[self.activations[k]][1](z, a)
            grads[2 * k] = cache.inputs[k].T @ dz
            grads[2 * k + 1] = dz.sum(axis=0)
            g = dz @ self.weights[k].T
        return grads, (g[0] if cache.squeeze else g)

    def to_dict(self, meta=None):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": self.sizes,
            "activations": self.activations,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "meta": meta or {},
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a dense-network checkpoint of a supported version")
        return cls(doc["sizes"], doc["activations"], weights=doc["weights"], biases=doc["biases"])

    def save(self, path, meta=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(meta), fh)
        return Path(path)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        net = cls.from_dict(doc)
        net.meta = doc.get("meta", {})
        return net


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, opt: OptimizerState):
    """Bias-corrected Adam update applied in place to ``params``."""
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match parameters")
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


class Adam:
    def __init__(self, net: DenseNet, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.net = net
        self.state = OptimizerState(lr, betas[0], betas[1], eps)

    def step(self, grads):
        adam_step(self.net.parameters(), grads, self.state)
        self.net.touch()

    def state_arrays(self, prefix):
        out = {f"{prefix}.step": np.array(self.state.step)}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_state_arrays(self, arrays, prefix):
        self.state.step = int(arrays[f"{prefix}.step"])
        n = len(self.net.parameters())
        if f"{prefix}.m0" in arrays:
            self.state.m = [np.array(arrays[f"{prefix}.m{i}"]) for i in range(n)]
            self.state.v = [np.array(arrays[f"{prefix}.v{i}"]) for i in range(n)]


# --- autoencoder -----------------------------------------------------------

MAP_SIZE = 64
LATENT_DIM = 32


@dataclass
class AutoencoderConfig:
    hidden: tuple = (512, 128)
    latent: int = LATENT_DIM
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    max_steps: int = None
    val_fraction: float = 0.2
    seed: int = 0


class AutoencoderModel:
    def __init__(self, encoder: DenseNet, decoder: DenseNet, trained=False):
        if encoder.out_dim != decoder.in_dim:
            raise ShapeError("encoder output must feed the decoder input")
        self.encoder = encoder
        self.decoder = decoder
        self.trained = trained

    @classmethod
    def build(cls, cfg: AutoencoderConfig = None, rng=None):
        cfg = cfg or AutoencoderConfig()
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed if rng is None else rng)
        n = MAP_SIZE * MAP_SIZE
        enc_sizes = [n, *cfg.hidden, cfg.latent]
        dec_sizes = [cfg.latent, *reversed(cfg.hidden), n]
        encoder = DenseNet(enc_sizes, ["relu"] * len(cfg.hidden) + ["identity"], rng)
        decoder = DenseNet(dec_sizes, ["relu"] * len(cfg.hidden) + ["sigmoid"], rng)
        return cls(encoder, decoder)

    def encode(self, map64):
        """Latent vector(s) for one (64, 64) map or a batch (N, 64, 64)."""
        if not self.trained:
            warnings.warn("encoding with an untrained autoencoder", stacklevel=2)
        x = np.asarray(map64, dtype=float)
        flat = x.reshape(-1, MAP_SIZE * MAP_SIZE)
        z = self.encoder(flat)
        return z[0] if x.ndim == 2 else z

    def __call__(self, map64):
        return self.encode(map64)

    def reconstruct(self, maps):
        x = np.asarray(maps, dtype=float).reshape(-1, MAP_SIZE * MAP_SIZE)
        return self.decoder(self.encoder(x)).reshape(-1, MAP_SIZE, MAP_SIZE)

    def loss(self, maps):
        x = np.asarray(maps, dtype=float).reshape(-1, MAP_SIZE * MAP_SIZE)
        y = self.decoder(self.encoder(x))
        return float(np.mean((y - x) ** 2))

    def train_step(self, batch, enc_opt: Adam, dec_opt: Adam):
        x = batch.reshape(len(batch), -1)
        z, enc_cache = self.encoder.forward(x)
        y, dec_cache = self.decoder.forward(z)
        diff = y - x
        loss = float(np.mean(diff**2))
        g_dec, g_z = self.decoder.backward(dec_cache, 2.0 * diff / diff.size)
        g_enc, _ = self.encoder.backward(enc_cache, g_z)
        dec_opt.step(g_dec)
        enc_opt.step(g_enc)
        return loss

    def save(self, path, meta=None):
        doc = {
            "format": "hdaland-autoencoder",
            "version": CHECKPOINT_VERSION,
            "trained": self.trained,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "meta": meta or {},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return Path(path)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "hdaland-autoencoder":
            raise ValueError(f"{path} is not an autoencoder checkpoint")
        model = cls(DenseNet.from_dict(doc["encoder"]), DenseNet.from_dict(doc["decoder"]), doc["trained"])
        model.meta = doc.get("meta", {})
        return model


def train_autoencoder(dataset, cfg: AutoencoderConfig = None):
    """Fit an autoencoder to safety maps by minibatch Adam on the mean squared error.

    Returns:
        (model, history) where history holds per-epoch ``train`` and ``val`` losses.
    """
    cfg = cfg or AutoencoderConfig()
    data = np.asarray(dataset, dtype=float).reshape(-1, MAP_SIZE * MAP_SIZE)
    if len(data) == 0:
        raise UsageError("autoencoder dataset is empty")
    if data.min() < 0 or data.max() > 1:
        raise ValueError("safety maps must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    model = AutoencoderModel.build(cfg, rng)
    order = rng.permutation(len(data))
    n_val = int(round(cfg.val_fraction * len(data))) if len(data) > 1 else 0
    val, train = data[order[:n_val]], data[order[n_val:]]
    enc_opt = Adam(model.encoder, cfg.lr)
    dec_opt = Adam(model.decoder, cfg.lr)
    history = {"train": [], "val": [], "steps": 0}
    steps = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), cfg.batch_size):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            losses.append(model.train_step(train[perm[start:start + cfg.batch_size]], enc_opt, dec_opt))
            steps += 1
        if losses:
            history["train"].append(float(np.mean(losses)))
            history["val"].append(model.loss(val) if len(val) else float("nan"))
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    history["steps"] = steps
    model.trained = True
    return model, history
