"""Dense feedforward networks, exact backpropagation, and the SGD schedule.

Weights are stored as ``(in_dim, out_dim)`` so a batch ``X`` (rows are
samples) maps to ``X @ W + b``.
"""
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import DivergenceError, ShapeError
from .numerics import Rng, as_matrix

ACTIVATIONS = ("sigmoid", "linear", "softmax")
LOG_FLOOR = math.log(1e-12)


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    CROSS_ENTROPY = "cross_entropy"
    VARIANCE_TO_TARGETS = "variance_to_targets"


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class TrainConfig:
    """Optimizer schedule.

    ``lr_decay`` picks how the iteration count divides the initial rate:
    ``"exponential"`` uses ``lambda0 / 1.00004**t``, ``"inverse_t"`` uses
    ``lambda0 / (1.00004 * t)``. ``momentum_ramp_iters=None`` ramps over
    one epoch.
    """

    lambda0: float = 0.01
    mu_final: float = 0.99
    minibatch: int = 10
    epochs: int = 100
    seed: int = 0
    momentum_ramp_iters: int | None = None
    lr_decay: str = "exponential"
    decay_factor: float = 1.00004
    momentum_start: float = 0.5
    l2: float = 0.0

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not 0.0 <= self.mu_final < 1.0:
            raise ValueError("mu_final must lie in [0, 1)")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr_decay not in ("exponential", "inverse_t"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")

    def with_(self, **changes):
        return replace(self, **changes)


def learning_rate(cfg, t):
    if t < 1:
        raise ValueError("iteration count starts at 1")
    if cfg.lr_decay == "inverse_t":
        return cfg.lambda0 / (cfg.decay_factor * t)
    return cfg.lambda0 / cfg.decay_factor ** t


def momentum(cfg, t, ramp_iters):
    frac = min(1.0, t / max(1, ramp_iters))
    return cfg.momentum_start + (cfg.mu_final - cfg.momentum_start) * frac


@dataclass
class Network:
    layers: list
    weights: list
    biases: list
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        if not (len(self.layers) == len(self.weights) == len(self.biases)):
            raise ShapeError("layers, weights and biases must have equal length")
        for i, spec in enumerate(self.layers):
            if i > 0 and self.layers[i - 1].out_dim != spec.in_dim:
                raise ShapeError(
                    f"layer {i - 1} outputs {self.layers[i - 1].out_dim} but layer {i} expects {spec.in_dim}")
            if spec.activation == "softmax" and i != len(self.layers) - 1:
                raise ShapeError("softmax is only allowed on the final layer")
            if self.weights[i].shape != (spec.in_dim, spec.out_dim):
                raise ShapeError(f"weight {i} has shape {self.weights[i].shape}, expected "
                                 f"{(spec.in_dim, spec.out_dim)}")
            if self.biases[i].shape != (spec.out_dim,):
                raise ShapeError(f"bias {i} has shape {self.biases[i].shape}, expected ({spec.out_dim},)")

    @classmethod
    def initialize(cls, dims, activations, rng):
        """Glorot-uniform weights (x4 for sigmoid layers), zero biases."""
        if isinstance(rng, int):
            rng = Rng(rng)
        if len(activations) != len(dims) - 1:
            raise ShapeError("need one activation per layer")
        layers, weights, biases = [], [], []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            layers.append(LayerSpec(fan_in, fan_out, act))
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            if act == "sigmoid":
                bound *= 4.0
            weights.append(rng.uniform((fan_in, fan_out), -bound, bound))
            biases.append(np.zeros(fan_out))
        return cls(layers, weights, biases)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def dims(self):
        return [self.layers[0].in_dim] + [s.out_dim for s in self.layers]

    @property
    def output_activation(self):
        return self.layers[-1].activation

    def copy(self):
        return Network(list(self.layers), [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], dict(self.tags))

    def truncated(self, n_layers):
        """First ``n_layers`` layers as a new network (parameters copied)."""
        return Network(list(self.layers[:n_layers]), [w.copy() for w in self.weights[:n_layers]],
                       [b.copy() for b in self.biases[:n_layers]])

    def stacked(self, other):
        """This network followed by ``other``."""
        return Network(list(self.layers) + list(other.layers),
                       [w.copy() for w in self.weights + other.weights],
                       [b.copy() for b in self.biases + other.biases])

    def predict(self, x, batch=4096):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return forward(self, x)[-1]
        out = np.empty((x.shape[0], self.output_dim))
        for start in range(0, x.shape[0], batch):
            out[start:start + batch] = forward(self, x[start:start + batch])[-1]
        return out

    def parameters_equal(self, other):
        return (self.layers == other.layers
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def _activate(z, kind):
    if kind == "sigmoid":
        return expit(z)
    if kind == "linear":
        return z
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net, x):
    """All layer activations for ``x`` (a vector or a batch of rows).

    Returns ``[h_1, ..., h_L, output]``; the input itself is not included.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not match network input dim {net.input_dim}")
    acts = []
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        h = _activate(h @ w + b, spec.activation)
        acts.append(h)
    if single:
        acts = [a[0] for a in acts]
    return acts


def _check_loss_pairing(kind, activation):
    kind = LossKind(kind)
    if kind is LossKind.CROSS_ENTROPY and activation != "softmax":
        raise ShapeError("cross_entropy requires a softmax output layer")
    if kind is not LossKind.CROSS_ENTROPY and activation == "softmax":
        raise ShapeError(f"{kind.value} requires a linear (or sigmoid reconstruction) output layer")
    return kind


def loss(kind, outputs, targets):
    """Mean over rows of the per-sample loss."""
    kind = LossKind(kind)
    outputs = as_matrix(outputs, "outputs")
    targets = as_matrix(targets, "targets")
    if outputs.shape != targets.shape:
        raise ShapeError(f"outputs {outputs.shape} and targets {targets.shape} differ")
    if kind is LossKind.CROSS_ENTROPY:
        with np.errstate(divide="ignore"):
            logp = np.maximum(np.log(outputs), LOG_FLOOR)
        return float(-np.sum(targets * logp) / outputs.shape[0])
    diff = outputs - targets
    return float(np.sum(diff * diff) / outputs.shape[0])


def objective(net, x, targets, kind, l2=0.0):
    value = loss(kind, net.predict(x), targets)
    if l2:
        value += 0.5 * l2 * sum(float(np.sum(w * w)) for w in net.weights)
    return value


def _softmax_ce_delta(logits, targets):
    # exact gradient of the floored cross entropy w.r.t. the logits
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    p = np.exp(logp)
    live = targets * (logp > LOG_FLOOR)
    return p * live.sum(axis=1, keepdims=True) - live


def backward(net, batch_x, batch_t, kind, l2=0.0, lowest_layer=0):
    """Gradients of ``loss`` (plus optional L2 term) for every layer.

    Returns a list of ``(dW, db)`` pairs. Layers below ``lowest_layer`` get
    ``None`` and are skipped entirely, which is how frozen stacks stay cheap.
    """
    kind = _check_loss_pairing(kind, net.output_activation)
    x = as_matrix(batch_x, "batch_x")
    t = as_matrix(batch_t, "batch_t")
    n = x.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    if t.shape != (n, net.output_dim):
        raise ShapeError(f"targets of shape {t.shape} do not match outputs ({n}, {net.output_dim})")
    acts = [x] + forward(net, x)
    out = acts[-1]
    if kind is LossKind.CROSS_ENTROPY:
        logits = acts[-2] @ net.weights[-1] + net.biases[-1]
        delta = _softmax_ce_delta(logits, t) / n
    else:
        delta = 2.0 * (out - t) / n
        if net.output_activation == "sigmoid":
            delta = delta * out * (1.0 - out)
    grads = [None] * net.depth
    for i in range(net.depth - 1, lowest_layer - 1, -1):
        gw = acts[i].T @ delta
        if l2:
            gw = gw + l2 * net.weights[i]
        grads[i] = (gw, delta.sum(axis=0))
        if i > lowest_layer:
            delta = delta @ net.weights[i].T
            below = net.layers[i - 1].activation
            if below == "sigmoid":
                a = acts[i]
                delta = delta * a * (1.0 - a)
    return grads


def zero_velocity(net):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]


def sgd_step(net, grads, t, cfg, velocity, ramp_iters=None):
    """One momentum step in place: ``v <- m v - eta g``, ``theta <- theta + v``."""
    eta = learning_rate(cfg, t)
    if ramp_iters is None:
        ramp_iters = cfg.momentum_ramp_iters or 1
    m = momentum(cfg, t, ramp_iters)
    for i, g in enumerate(grads):
        if g is None:
            continue
        vw, vb = velocity[i]
        vw *= m
        vw -= eta * g[0]
        vb *= m
        vb -= eta * g[1]
        net.weights[i] += vw
        net.biases[i] += vb
    return net


def train(net, data_x, data_t, kind, cfg, frozen=(), corrupt=None, l2=None, tied=(), log=None):
    """Minibatch SGD over a fixed epoch budget.

    ``frozen`` lists layer indices that never change. ``corrupt(batch, rng)``
    optionally perturbs each minibatch's inputs (targets stay clean). ``tied``
    holds ``(i, j)`` pairs whose weights are kept transposes of each other
    (``W_j = W_i.T``); their gradients are summed. The loss trace is the clean
    full-dataset objective after every epoch.

    Returns ``(trained_copy, loss_trace)``; the input network is untouched.
    """
    kind = _check_loss_pairing(kind, net.output_activation)
    x = as_matrix(data_x, "data_x")
    t = as_matrix(data_t, "data_t")
    if x.shape[0] != t.shape[0] or x.shape[0] < 1:
        raise ShapeError(f"data_x has {x.shape[0]} rows but data_t has {t.shape[0]}")
    l2 = cfg.l2 if l2 is None else l2
    net = net.copy()
    trace = []
    if cfg.epochs == 0:
        return net, trace
    frozen = set(frozen)
    lowest = 0
    while lowest in frozen:
        lowest += 1
    n = x.shape[0]
    iters = math.ceil(n / cfg.minibatch)
    ramp = cfg.momentum_ramp_iters or iters
    for i, j in tied:
        net.weights[j] = net.weights[i].T.copy()
    velocity = zero_velocity(net)
    step = 0
    for epoch in range(cfg.epochs):
        order = Rng(cfg.seed + epoch).permutation(n)
        noise_rng = Rng(cfg.seed + epoch + 0x5EED0000) if corrupt is not None else None
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            bx = x[idx]
            if corrupt is not None:
                bx = corrupt(bx, noise_rng)
            step += 1
            grads = backward(net, bx, t[idx], kind, l2=l2, lowest_layer=lowest)
            for i in frozen:
                if i < len(grads):
                    grads[i] = None
            for i, j in tied:
                shared = grads[i][0] + grads[j][0].T
                grads[i] = (shared, grads[i][1])
                grads[j] = (shared.T, grads[j][1])
            with np.errstate(over="ignore", invalid="ignore"):
                sgd_step(net, grads, step, cfg, velocity, ramp_iters=ramp)
        with np.errstate(over="ignore", invalid="ignore"):
            value = objective(net, x, t, kind, l2)
        if not math.isfinite(value):
            raise DivergenceError(epoch, learning_rate(cfg, step))
        trace.append(value)
        if log is not None:
            log(epoch, value)
    return net, trace
