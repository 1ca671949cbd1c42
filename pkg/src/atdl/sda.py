"""Stacked denoising autoencoder: greedy pretraining and supervised source fine-tuning."""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .network import LayerSpec, LossKind, Network, TrainConfig, train
from .numerics import Rng, as_matrix, derive_seed

_OUTPUT_SEED_TAG = 1000


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "masking"
    rate: float = 0.3

    def __post_init__(self):
        if self.kind == "masking":
            if not 0.0 <= self.rate < 1.0:
                raise ValueError("masking rate must lie in [0, 1)")
        elif self.kind == "gaussian":
            if self.rate < 0.0:
                raise ValueError("gaussian stddev must be >= 0")
        else:
            raise ValueError(f"unknown corruption kind {self.kind!r}")


@dataclass
class SourceModel:
    net: Network
    label_names: list
    provenance: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    @property
    def source_id(self):
        return self.provenance.get("id", "source")

    def outputs(self, x):
        return self.net.predict(x)


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def corrupt(x, spec, rng):
    """Apply the corruption process to a vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if spec.rate == 0.0:
        return x.copy()
    if spec.kind == "masking":
        return x * rng.keep_mask(x.shape, spec.rate)
    return x + rng.normal(x.shape, scale=spec.rate)


def _fit_autoencoder(x, hidden_dim, spec, cfg, tied=False):
    d = x.shape[1]
    net = Network.initialize([d, hidden_dim, d], ["sigmoid", "sigmoid"], Rng(cfg.seed))
    return train(net, x, x, LossKind.SQUARED_ERROR, cfg,
                 corrupt=lambda batch, rng: corrupt(batch, spec, rng),
                 tied=[(0, 1)] if tied else ())


def pretrain_layer(input_acts, hidden_dim, spec=CorruptionSpec(), cfg=TrainConfig(epochs=50), tied=False):
    """Train one denoising autoencoder and return its encoder ``(W, b)``.

    Inputs are corrupted per minibatch; the reconstruction target is the
    clean input. The decoder is discarded.
    """
    if hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1")
    x = as_matrix(input_acts, "input_acts")
    net, _ = _fit_autoencoder(x, hidden_dim, spec, cfg, tied)
    return net.weights[0], net.biases[0]


def stack_pretrain(x_source, hidden_dims, spec=CorruptionSpec(), cfg=TrainConfig(epochs=50), tied=False):
    """Greedy layer-wise pretraining; layer i sees the clean activations of layers < i.

    Layer ``i`` trains with seed ``derive_seed(cfg.seed, i)``. The per-layer
    reconstruction traces are stored in ``net.tags["pretrain_traces"]``.
    """
    if not hidden_dims:
        raise ValueError("hidden_dims must be nonempty")
    h = as_matrix(x_source, "x_source")
    weights, biases, traces = [], [], []
    for i, width in enumerate(hidden_dims):
        layer_cfg = cfg.with_(seed=derive_seed(cfg.seed, i))
        ae, trace = _fit_autoencoder(h, width, spec, layer_cfg, tied)
        weights.append(ae.weights[0])
        biases.append(ae.biases[0])
        traces.append(trace)
        h = ae.truncated(1).predict(h)
    dims = [as_matrix(x_source).shape[1]] + list(hidden_dims)
    layers = [LayerSpec(a, b, "sigmoid") for a, b in zip(dims[:-1], dims[1:])]
    stack = Network(layers, weights, biases)
    stack.tags["pretrain_traces"] = traces
    return stack


def attach_output(stack, out_dim, activation, seed):
    head = Network.initialize([stack.output_dim, out_dim], [activation], Rng(derive_seed(seed, _OUTPUT_SEED_TAG)))
    return stack.stacked(head)


def finetune_source(stack, x_source, y_source, cfg=TrainConfig(), output="linear", label_names=None,
                    provenance=None):
    """Append an output layer and fine-tune every layer on the labelled source data.

    ``output="linear"`` trains with squared error (the model ATDL transfers);
    ``output="softmax"`` trains with cross entropy (baseline mode).
    """
    if output not in ("linear", "softmax"):
        raise ValueError("output must be 'linear' or 'softmax'")
    y = as_matrix(y_source, "y_source")
    net = attach_output(stack, y.shape[1], output, cfg.seed)
    kind = LossKind.SQUARED_ERROR if output == "linear" else LossKind.CROSS_ENTROPY
    net, trace = train(net, x_source, y, kind, cfg)
    names = list(label_names) if label_names is not None else [str(i) for i in range(y.shape[1])]
    model = SourceModel(net, names, dict(provenance or {}))
    model.traces["finetune"] = trace
    model.traces["pretrain"] = stack.tags.get("pretrain_traces", [])
    return model


def build_source_model(x, labels, n_classes, hidden_dims, spec, pretrain_cfg, finetune_cfg,
                       output="linear", label_names=None, source_id="source"):
    """Full stage (A): greedy pretraining followed by supervised fine-tuning."""
    stack = stack_pretrain(x, hidden_dims, spec, pretrain_cfg)
    provenance = {
        "id": source_id,
        "config": config_hash({"hidden": list(hidden_dims), "corruption": [spec.kind, spec.rate],
                               "pretrain": vars(pretrain_cfg), "finetune": vars(finetune_cfg),
                               "output": output, "rows": int(np.shape(x)[0])}),
    }
    return finetune_source(stack, x, one_hot(labels, n_classes), finetune_cfg, output, label_names, provenance)
