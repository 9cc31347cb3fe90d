"""Bias-free feed-forward network for non-invariance detection, in numpy.

Layer stack::

    x -> dense -> relu -> batchnorm
      -> dense -> relu -> dropout
      -> dense -> relu -> dropout
      -> dense -> sigmoid

Training minimizes mean binary cross-entropy over every (sample, output)
entry with Nesterov-momentum SGD.  All arithmetic is float64.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

MODEL_VERSION = 1
PROFILES = {"paper": (8000, 8000, 8000), "desk": (512, 512, 512)}
CLIP = 1e-7


@dataclass
class Architecture:
    input_dim: int
    output_dim: int
    hidden_widths: tuple = PROFILES["desk"]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    use_bias: bool = False

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        if len(self.hidden_widths) != 3:
            raise ConfigError("exactly three hidden layers are supported")
        if min(self.input_dim, self.output_dim, *self.hidden_widths) < 1:
            raise ConfigError("all layer widths must be >= 1")
        if (self.hidden_activation, self.output_activation, self.use_bias) != ("relu", "sigmoid", False):
            raise ConfigError("only relu hidden / sigmoid output layers without bias are supported")

    @classmethod
    def for_profile(cls, profile: str, input_dim: int, output_dim: int) -> "Architecture":
        try:
            widths = PROFILES[profile]
        except KeyError:
            raise ConfigError(f"unknown width profile {profile!r}; choose from {sorted(PROFILES)}") from None
        return cls(input_dim, output_dim, widths)

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


@dataclass
class Network:
    architecture: Architecture
    weights: list
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    dropout: float = 0.5
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def check(self) -> None:
        dims = self.architecture.dims
        if len(self.weights) != len(dims) - 1:
            raise ShapeError(f"expected {len(dims) - 1} weight matrices, got {len(self.weights)}")
        for k, w in enumerate(self.weights):
            if w.shape != (dims[k], dims[k + 1]):
                raise ShapeError(f"layer {k} weights {w.shape}, expected {(dims[k], dims[k + 1])}")
        h1 = dims[1]
        for name in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            if getattr(self, name).shape != (h1,):
                raise ShapeError(f"{name} must have shape ({h1},)")
        if (self.bn_var < 0).any():
            raise ShapeError("running variance must be nonnegative")

    def parameters(self) -> list:
        """Trainable arrays in optimizer order: dense weights, then gamma, beta."""
        return [*self.weights, self.bn_gamma, self.bn_beta]

    def copy(self) -> "Network":
        return dataclasses.replace(
            self,
            weights=[w.copy() for w in self.weights],
            bn_gamma=self.bn_gamma.copy(),
            bn_beta=self.bn_beta.copy(),
            bn_mean=self.bn_mean.copy(),
            bn_var=self.bn_var.copy(),
        )


def init_network(arch: Architecture, rng: np.random.Generator) -> Network:
    """Glorot-uniform weights; identity batch normalization."""
    dims = arch.dims
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    h1 = dims[1]
    return Network(arch, weights, np.ones(h1), np.zeros(h1), np.zeros(h1), np.ones(h1))


def relu(z):
    return np.maximum(z, 0.0)


def sigmoid(z):
    # two-branch form avoids overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Cache:
    x: np.ndarray
    z1: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    d2: np.ndarray
    z3: np.ndarray
    d3: np.ndarray
    out: np.ndarray
    masks: tuple = field(default=(None, None))
    mode: str = "train"


def dropout_masks(net: Network, batch_size: int, rng: np.random.Generator) -> tuple:
    keep = 1.0 - net.dropout
    w = net.architecture.hidden_widths
    return tuple(rng.random((batch_size, w[k])) < keep for k in (1, 2))


def forward(net: Network, batch, mode: str = "infer", rng: np.random.Generator | None = None,
            masks: tuple | None = None, update_stats: bool = True):
    """Run the network; return ``(probabilities, cache)``.

    In ``"train"`` mode batch normalization uses batch statistics (and updates the
    running averages unless ``update_stats`` is false) and inverted dropout is
    applied with ``masks`` or, if not given, masks drawn from ``rng``.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.architecture.input_dim:
        raise ShapeError(f"batch must have shape (n, {net.architecture.input_dim}), got {x.shape}")
    W1, W2, W3, W4 = net.weights
    z1 = x @ W1
    a1 = relu(z1)
    if mode == "train":
        mu = a1.mean(axis=0)
        var = a1.var(axis=0)
        if update_stats:
            m = net.bn_momentum
            net.bn_mean *= m
            net.bn_mean += (1.0 - m) * mu
            net.bn_var *= m
            net.bn_var += (1.0 - m) * var
    elif mode == "infer":
        mu, var = net.bn_mean, net.bn_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + net.bn_eps)
    xhat = (a1 - mu) * inv_std
    h1 = net.bn_gamma * xhat + net.bn_beta

    z2 = h1 @ W2
    a2 = relu(z2)
    z3_in = a2
    if mode == "train":
        if masks is None:
            if rng is None:
                raise ValueError("train mode needs an rng or explicit dropout masks")
            masks = dropout_masks(net, x.shape[0], rng)
        scale = 1.0 / (1.0 - net.dropout)
        z3_in = a2 * masks[0] * scale
    z3 = z3_in @ W3
    a3 = relu(z3)
    z4_in = a3
    if mode == "train":
        z4_in = a3 * masks[1] * scale
    out = sigmoid(z4_in @ W4)
    cache = Cache(x, z1, xhat, inv_std, h1, z2, z3_in, z3, z4_in, out,
                  masks if mode == "train" else (None, None), mode)
    return out, cache


def bce_loss(predicted, target) -> float:
    """Mean binary cross-entropy with predictions clipped to ``[1e-7, 1 - 1e-7]``."""
    p = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {y.shape}")
    if p.size == 0:
        raise ValueError("bce_loss of an empty input")
    p = np.clip(p, CLIP, 1.0 - CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def backward(net: Network, cache: Cache, targets) -> list:
    """Gradients of mean BCE, in :meth:`Network.parameters` order."""
    if cache.mode != "train":
        raise ValueError("backward needs the cache of a train-mode forward pass")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != cache.out.shape:
        raise ShapeError(f"targets {y.shape} do not match cached batch {cache.out.shape}")
    W1, W2, W3, W4 = net.weights
    scale = 1.0 / (1.0 - net.dropout)
    n = y.shape[0]

    # predictions beyond the clip bounds contribute a constant to the loss
    inside = (cache.out > CLIP) & (cache.out < 1.0 - CLIP)
    delta = (cache.out - y) * inside / y.size
    gW4 = cache.d3.T @ delta
    g = delta @ W4.T
    g = g * cache.masks[1] * scale * (cache.z3 > 0)
    gW3 = cache.d2.T @ g
    g = g @ W3.T
    g = g * cache.masks[0] * scale * (cache.z2 > 0)
    gW2 = cache.h1.T @ g
    dh1 = g @ W2.T

    ggamma = (dh1 * cache.xhat).sum(axis=0)
    gbeta = dh1.sum(axis=0)
    dxhat = dh1 * net.bn_gamma
    da1 = cache.inv_std / n * (n * dxhat - dxhat.sum(axis=0)
                               - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
    dz1 = da1 * (cache.z1 > 0)
    gW1 = cache.x.T @ dz1
    return [gW1, gW2, gW3, gW4, ggamma, gbeta]


def sgd_nesterov_step(net: Network, gradients, velocity, lr: float, momentum: float):
    """In-place Nesterov update ``v' = m v - lr g``, ``w' = w + m v' - lr g``."""
    params = net.parameters()
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    if not (len(params) == len(gradients) == len(velocity)):
        raise ShapeError("parameter, gradient and velocity lists differ in length")
    for p, g, v in zip(params, gradients, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        v *= momentum
        v -= lr * g
        p += momentum * v - lr * g
    return net, velocity


def predict(net: Network, response_vector) -> np.ndarray:
    """Infer-mode probabilities for one flattened response vector (or a stack)."""
    x = np.asarray(response_vector, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.architecture.input_dim:
        raise ShapeError(f"expected {net.architecture.input_dim} responses, got {x.shape[1]}")
    out, _ = forward(net, x, mode="infer")
    return out[0] if single else out


def predict_batched(net: Network, X, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([predict(net, X[i:i + batch_size]) for i in range(0, len(X), batch_size)]
                          or [np.empty((0, net.architecture.output_dim))])


# ---------------------------------------------------------------- training

DEFAULT_EPOCHS = {"thresholds": 3, "loadings": 8}


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.8
    nesterov: bool = True
    batch_size: int = 256
    epochs: int | None = None
    split: tuple = (0.8, 0.1, 0.1)
    seed: int = 0
    early_stopping_patience: int | None = None

    def __post_init__(self):
        self.split = tuple(float(s) for s in self.split)
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.nesterov:
            raise ConfigError("only Nesterov momentum is supported")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"split fractions must be three nonnegative values summing to 1, got {self.split}")
        if self.split[0] == 0:
            raise ConfigError("training fraction must be positive")

    def epochs_for(self, target: str) -> int:
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[target]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_auroc: list = field(default_factory=list)
    first_epoch_batch_losses: list = field(default_factory=list)
    last_epoch_batch_losses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "val_auroc": self.val_auroc}


def split_indices(n: int, split: tuple) -> tuple:
    """Contiguous train/validation/test index ranges."""
    n_train = max(1, int(round(split[0] * n)))
    n_val = int(round(split[1] * n))
    n_val = min(n_val, n - n_train)
    idx = np.arange(n)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


def fit(X, Y, arch: Architecture, cfg: TrainConfig, epochs: int, rng: np.random.Generator,
        X_val=None, Y_val=None):
    """Train on in-memory arrays; ``X`` may be uint8 and is cast per batch."""
    from .evaluation import auroc
    from .errors import DegenerateLabelsError

    if X.shape[1] != arch.input_dim or Y.shape[1] != arch.output_dim:
        raise ShapeError(f"data {X.shape}/{Y.shape} does not fit architecture "
                         f"{arch.input_dim}->{arch.output_dim}")
    net = init_network(arch, rng)
    history = TrainHistory()
    velocity = None
    best = (math.inf, None, 0)
    n = X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx].astype(np.float64)
            yb = Y[idx].astype(np.float64)
            out, cache = forward(net, xb, mode="train", rng=rng)
            losses.append(bce_loss(out, yb))
            weights.append(len(idx))
            grads = backward(net, cache, yb)
            net, velocity = sgd_nesterov_step(net, grads, velocity, cfg.learning_rate, cfg.momentum)
        if epoch == 0:
            history.first_epoch_batch_losses = losses
        history.last_epoch_batch_losses = losses
        history.train_loss.append(float(np.average(losses, weights=weights)))
        if X_val is not None and len(X_val):
            pv = predict_batched(net, X_val)
            history.val_loss.append(bce_loss(pv, Y_val))
            try:
                history.val_auroc.append(auroc(pv.ravel(), Y_val.ravel()))
            except DegenerateLabelsError:
                history.val_auroc.append(float("nan"))
        else:
            history.val_loss.append(float("nan"))
            history.val_auroc.append(float("nan"))
        log.info("epoch %d/%d train_loss=%.5f val_loss=%.5f val_auroc=%.4f", epoch + 1, epochs,
                 history.train_loss[-1], history.val_loss[-1], history.val_auroc[-1])
        if cfg.early_stopping_patience is not None and X_val is not None and len(X_val):
            if history.val_loss[-1] < best[0]:
                best = (history.val_loss[-1], net.copy(), 0)
            else:
                best = (best[0], best[1], best[2] + 1)
                if best[2] >= cfg.early_stopping_patience:
                    log.info("early stopping after epoch %d", epoch + 1)
                    return best[1], history
    if best[1] is not None and history.val_loss[-1] > best[0]:
        return best[1], history
    return net, history


def train(corpus, target: str, arch: Architecture, cfg: TrainConfig, rng: np.random.Generator | None = None):
    """Train one network on a corpus; ``target`` selects the label half.

    Returns ``(network, history)``.  Replications are split contiguously into
    train/validation/test parts by ``cfg.split``; only the first two are used
    here.
    """
    from .store import split_labels

    if target not in DEFAULT_EPOCHS:
        raise ConfigError(f"target must be 'thresholds' or 'loadings', got {target!r}")
    if arch.input_dim != corpus.input_dim or arch.output_dim != corpus.n_cells:
        raise ShapeError(f"corpus ({corpus.input_dim} inputs, {corpus.n_cells} cells) does not match "
                         f"architecture ({arch.input_dim} -> {arch.output_dim})")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    X, labels = corpus.load_arrays()
    Y = split_labels(labels, target)
    tr, va, _ = split_indices(len(X), cfg.split)
    return fit(X[tr], Y[tr], arch, cfg, cfg.epochs_for(target), rng,
               X_val=X[va], Y_val=Y[va])
