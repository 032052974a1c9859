"""A small dense-network engine: forward, backprop, Adam, losses.

Networks are chains of affine layers with elementwise activations. Backward
passes return both parameter gradients and the gradient with respect to the
input, so nets can be composed by hand (the hierarchical autoencoder routes
gradients through its masking layer and discriminator this way).
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

log = logging.getLogger(__name__)

NET_VERSION = "hierdis-net/1"
ACTIVATIONS = ("identity", "relu", "softplus", "sigmoid")
SMOOTH = {"identity", "softplus", "sigmoid"}


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


def sigmoid(x):
    # tanh form is stable at both tails and much faster than masked exp
    return 0.5 * (1 + np.tanh(0.5 * x))


def softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _activate(name, x):
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0)
    if name == "softplus":
        return softplus(x)
    if name == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, pre, post):
    if name == "identity":
        return None
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "softplus":
        return sigmoid(pre)
    if name == "sigmoid":
        return post * (1 - post)
    raise ValueError(f"unknown activation {name!r}")


class DenseNet:
    """Fully connected network.

    ``widths`` lists layer sizes including input and output. Hidden layers
    use ``activation``; the last layer uses ``final_activation``.
    """

    def __init__(self, widths, activation="relu", final_activation="identity",
                 seed=0, dtype=np.float32, params=None):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        for a in (activation, final_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.activation = activation
        self.final_activation = final_activation
        self.dtype = np.dtype(dtype)
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                params.append(rng.uniform(-bound, bound, fan_out))
        self.params = [np.asarray(p, dtype=self.dtype) for p in params]
        self._check_shapes()

    def _check_shapes(self):
        for i, (fi, fo) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            if W.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"layer {i}: parameter shapes {W.shape}, {b.shape} do not match widths")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def activations(self) -> list[str]:
        return [self.activation] * (self.n_layers - 1) + [self.final_activation]

    @property
    def smooth(self) -> bool:
        """True when every activation is differentiable everywhere."""
        return all(a in SMOOTH for a in self.activations)

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]

    def copy(self) -> "DenseNet":
        return DenseNet(self.widths, self.activation, self.final_activation,
                        dtype=self.dtype, params=[p.copy() for p in self.params])

    def astype(self, dtype) -> "DenseNet":
        return DenseNet(self.widths, self.activation, self.final_activation,
                        dtype=dtype, params=[p.astype(dtype) for p in self.params])

    def forward(self, x, return_cache=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise ValueError(f"expected input of shape (n, {self.in_width}), got {x.shape}")
        acts = [x]
        pres = []
        h = x
        for i, act in enumerate(self.activations):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = _activate(act, z)
            pres.append(z)
            acts.append(h)
        if return_cache:
            return h, (pres, acts)
        return h

    __call__ = forward

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given ``d loss / d output``.

        Returns ``(param_grads, grad_input)``.
        """
        pres, acts = cache
        g = np.asarray(grad_out, dtype=self.dtype)
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            d = _activation_grad(self.activations[i], pres[i], acts[i + 1])
            if d is not None:
                g = g * d
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    # -- persistence -------------------------------------------------------

    def header(self) -> dict:
        return {"version": NET_VERSION, "widths": self.widths, "activation": self.activation,
                "final_activation": self.final_activation}

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write((json.dumps(self.header()) + "\n").encode())
        for p in self.params:
            buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, dtype=np.float32) -> "DenseNet":
        head, _, blob = data.partition(b"\n")
        meta = json.loads(head)
        if meta.get("version") != NET_VERSION:
            raise ValueError(f"unsupported model version {meta.get('version')!r}")
        flat = np.frombuffer(blob, dtype="<f4")
        widths = meta["widths"]
        params, pos = [], 0
        for fi, fo in zip(widths[:-1], widths[1:]):
            params.append(flat[pos:pos + fi * fo].reshape(fi, fo))
            pos += fi * fo
            params.append(flat[pos:pos + fo])
            pos += fo
        if pos != flat.size:
            raise ValueError("parameter blob size does not match widths")
        return cls(widths, meta["activation"], meta["final_activation"], dtype=dtype, params=params)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path, dtype=np.float32):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), dtype=dtype)


# -- losses ----------------------------------------------------------------


@dataclass(frozen=True)
class LossKind:
    kind: str = "gaussian"  # gaussian | bernoulli | mse
    sigma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("gaussian", "bernoulli", "mse"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian sigma must be positive")


def per_sample_loss(loss: LossKind, pred, target):
    """Loss per row, summed over features. Bernoulli expects logits."""
    if loss.kind == "gaussian":
        r = pred - target
        return (r * r).sum(axis=1) / (2 * loss.sigma ** 2) + pred.shape[1] * 0.5 * np.log(2 * np.pi * loss.sigma ** 2)
    if loss.kind == "mse":
        r = pred - target
        return (r * r).sum(axis=1)
    return (softplus(pred) - target * pred).sum(axis=1)


def loss_and_grad(loss: LossKind, pred, target):
    """Mean over the batch of :func:`per_sample_loss`, and its gradient."""
    n = len(pred)
    value = float(per_sample_loss(loss, pred, target).mean())
    if loss.kind == "gaussian":
        grad = (pred - target) / (loss.sigma ** 2 * n)
    elif loss.kind == "mse":
        grad = 2 * (pred - target) / n
    else:
        grad = (sigmoid(pred) - target) / n
    return value, grad.astype(pred.dtype, copy=False)


def bernoulli_nll_probs(p, target, eps=1e-7):
    p = np.clip(p, eps, 1 - eps)
    return -(target * np.log(p) + (1 - target) * np.log(1 - p)).sum(axis=1)


# -- optimisation ----------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_at: tuple = (0.5, 0.75)
    decay: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size positive")
        self.decay_at = tuple(self.decay_at)

    def to_dict(self):
        return asdict(self)


def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Step-decayed learning rate: x decay at each fraction in ``decay_at``."""
    lr = cfg.lr
    for frac in cfg.decay_at:
        if step >= frac * total_steps:
            lr *= cfg.decay
    return lr


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.beta1 ** self.t
        bc2 = 1 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * (g * g)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + c.eps)


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


@dataclass
class TrainResult:
    encoder: DenseNet
    decoder: DenseNet
    history: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.history[-1] if self.history else float("nan")


def autoencoder_loss_grad(encoder, decoder, xb, loss: LossKind):
    """Loss and gradients for encoder and decoder parameters on one batch."""
    z, ec = encoder.forward(xb, return_cache=True)
    out, dc = decoder.forward(z, return_cache=True)
    value, g = loss_and_grad(loss, out, xb)
    dgrads, gz = decoder.backward(dc, g)
    egrads, _ = encoder.backward(ec, gz)
    return value, egrads, dgrads


def train_autoencoder(encoder: DenseNet, decoder: DenseNet, X, cfg: TrainConfig,
                      loss: LossKind = LossKind()) -> TrainResult:
    """Minibatch Adam on reconstruction loss. Trains copies of the nets."""
    if encoder.out_width != decoder.in_width:
        raise ValueError("encoder output width must equal decoder input width")
    encoder, decoder = encoder.copy(), decoder.copy()
    X = np.asarray(X, dtype=encoder.dtype)
    n = len(X)
    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(encoder.params + decoder.params, cfg)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        tot, cnt = 0.0, 0
        for idx in minibatches(n, cfg.batch_size, rng):
            xb = X[idx]
            value, eg, dg = autoencoder_loss_grad(encoder, decoder, xb, loss)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch)
            opt.step(eg + dg, learning_rate(cfg, step, total))
            step += 1
            tot += value * len(idx)
            cnt += len(idx)
        history.append(tot / cnt)
        log.debug("epoch %d loss %.5f", epoch, history[-1])
    return TrainResult(encoder, decoder, history)


def encode(net: DenseNet, X, batch_size=4096) -> np.ndarray:
    X = np.asarray(X)
    return np.concatenate([net.forward(X[i:i + batch_size]) for i in range(0, len(X), batch_size)]) \
        if len(X) else np.zeros((0, net.out_width), dtype=net.dtype)


def gradient_check(encoder: DenseNet, decoder: DenseNet | None, X, loss: LossKind,
                   probes: int = 100, h: float = 1e-4, seed: int = 0, target=None) -> float:
    """Max relative error between backprop and central differences.

    Runs in float64 on copies. ``probes`` parameter entries are drawn at
    random across all layers of both nets. With ``decoder=None`` the
    encoder's output is scored against ``target`` directly.
    """
    enc = encoder.astype(np.float64)
    dec = decoder.astype(np.float64) if decoder is not None else None
    X = np.asarray(X, dtype=np.float64)
    target = X if target is None else np.asarray(target, dtype=np.float64)

    def value_and_grads():
        z, ec = enc.forward(X, return_cache=True)
        if dec is None:
            v, g = loss_and_grad(loss, z, target)
            return v, enc.backward(ec, g)[0]
        out, dc = dec.forward(z, return_cache=True)
        v, g = loss_and_grad(loss, out, target)
        dg, gz = dec.backward(dc, g)
        return v, enc.backward(ec, gz)[0] + dg

    params = enc.params + (dec.params if dec is not None else [])
    _, grads = value_and_grads()
    rng = np.random.default_rng(seed)
    sizes = np.array([p.size for p in params])
    worst = 0.0
    for _ in range(probes):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        j = int(rng.integers(params[k].size))
        flat = params[k].reshape(-1)
        old = flat[j]
        flat[j] = old + h
        up = value_and_grads()[0]
        flat[j] = old - h
        down = value_and_grads()[0]
        flat[j] = old
        num = (up - down) / (2 * h)
        ana = grads[k].reshape(-1)[j]
        err = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
        worst = max(worst, err)
    return worst
