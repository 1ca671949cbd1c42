"""Comparison methods built on the same network and pretraining code as the transfer method."""
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .network import LossKind, Network, TrainConfig, train
from .numerics import PcaModel, Rng, as_matrix, derive_seed, fit_pca
from .sda import CorruptionSpec, attach_output, one_hot, stack_pretrain

BASELINE_KINDS = ("non_transfer", "ssl", "agrawal", "oquab", "pca_logistic")
LOGISTIC_L2 = 1e-4


@dataclass
class Classifier:
    """A softmax network, optionally preceded by a fixed PCA projection."""

    kind: str
    net: Network
    label_names: list
    pca: PcaModel | None = None
    pca_dims: int = 0
    trace: list | None = None

    def _inputs(self, x):
        x = as_matrix(x, "x")
        return self.pca.transform(x, self.pca_dims) if self.pca is not None else x

    def probabilities(self, x):
        return self.net.predict(self._inputs(x))

    def predict(self, x):
        return np.argmax(self.probabilities(x), axis=1)


def _n_labels(labels, n_labels):
    return int(np.max(labels)) + 1 if n_labels is None else n_labels


def _supervised_head(stack, x, labels, n_labels, cfg, frozen=()):
    net = attach_output(stack, n_labels, "softmax", cfg.seed)
    return train(net, x, one_hot(labels, n_labels), LossKind.CROSS_ENTROPY, cfg, frozen=frozen)


def non_transfer(x_target, labels, hidden_dims, spec=CorruptionSpec(), cfg=TrainConfig(), pretrain_cfg=None,
                 n_labels=None, label_names=None, stack=None):
    """Denoising-autoencoder pretraining and softmax fine-tuning on target data alone.

    A ``stack`` already pretrained on ``x_target`` may be passed to skip the
    pretraining step (it does not depend on the fine-tuning settings).
    """
    n_labels = _n_labels(labels, n_labels)
    x = as_matrix(x_target, "x_target")
    if stack is None:
        stack = pretrain_target_stack(x, hidden_dims, spec, pretrain_cfg or cfg)
    net, trace = _supervised_head(stack, x, labels, n_labels, cfg)
    return Classifier("non_transfer", net, label_names or [str(i) for i in range(n_labels)], trace=trace)


def pretrain_target_stack(x_target, hidden_dims, spec=CorruptionSpec(), pretrain_cfg=TrainConfig()):
    return stack_pretrain(as_matrix(x_target, "x_target"), hidden_dims, spec, pretrain_cfg)


def pretrain_mixed_stack(x_source, x_target, hidden_dims, spec=CorruptionSpec(), pretrain_cfg=TrainConfig()):
    """Pretraining on source rows followed by target rows (no reweighting)."""
    xt = as_matrix(x_target, "x_target")
    xs = np.asarray(x_source, dtype=np.float64).reshape(-1, xt.shape[1])
    pool = np.vstack([xs, xt]) if xs.shape[0] else xt
    stack = stack_pretrain(pool, hidden_dims, spec, pretrain_cfg)
    stack.tags["pretrain_rows"] = pool.shape[0]
    return stack


def ssl(x_source, x_target, labels, hidden_dims, spec=CorruptionSpec(), cfg=TrainConfig(), pretrain_cfg=None,
        n_labels=None, label_names=None, stack=None):
    """Pretrain on the union of (unlabelled) source and target inputs, fine-tune on target labels."""
    n_labels = _n_labels(labels, n_labels)
    xt = as_matrix(x_target, "x_target")
    if stack is None:
        stack = pretrain_mixed_stack(x_source, xt, hidden_dims, spec, pretrain_cfg or cfg)
    net, trace = _supervised_head(stack, xt, labels, n_labels, cfg)
    return Classifier("ssl", net, label_names or [str(i) for i in range(n_labels)], trace=trace)


def _hidden_stack(source):
    net = source.net
    return net.truncated(net.depth - 1)


def agrawal(source, x_target, labels, cfg=TrainConfig(), n_labels=None, label_names=None):
    """Drop the source output layer, add a fresh softmax head, fine-tune every layer."""
    n_labels = _n_labels(labels, n_labels)
    net, trace = _supervised_head(_hidden_stack(source), as_matrix(x_target), labels, n_labels, cfg)
    return Classifier("agrawal", net, label_names or [str(i) for i in range(n_labels)], trace=trace)


def oquab(source, x_target, labels, adapt_dim=None, cfg=TrainConfig(), n_labels=None, label_names=None):
    """Frozen source hidden stack + new sigmoid adaptation layer + softmax head.

    Only the two new layers are trained. ``adapt_dim`` defaults to the width
    of the last source hidden layer.
    """
    n_labels = _n_labels(labels, n_labels)
    stack = _hidden_stack(source)
    adapt_dim = adapt_dim or stack.output_dim
    head = Network.initialize([stack.output_dim, adapt_dim, n_labels], ["sigmoid", "softmax"],
                              Rng(derive_seed(cfg.seed, 2000)))
    net = stack.stacked(head)
    frozen = range(stack.depth)
    net, trace = train(net, as_matrix(x_target), one_hot(labels, n_labels), LossKind.CROSS_ENTROPY, cfg,
                       frozen=frozen)
    return Classifier("oquab", net, label_names or [str(i) for i in range(n_labels)], trace=trace)


def pca_logistic(x_target, labels, energy=0.995, cfg=TrainConfig(), n_labels=None, label_names=None,
                 l2=LOGISTIC_L2):
    """Multinomial logistic regression on the leading principal components."""
    n_labels = _n_labels(labels, n_labels)
    x = as_matrix(x_target, "x_target")
    pca, dims = fit_pca(x, energy)
    if dims == 0:
        raise DataFormatError("target inputs have zero variance; nothing to project")
    z = pca.transform(x, dims)
    layer = Network.initialize([dims, n_labels], ["softmax"], Rng(cfg.seed))
    layer.weights[0][:] = 0.0
    net, trace = train(layer, z, one_hot(labels, n_labels), LossKind.CROSS_ENTROPY, cfg, l2=l2)
    return Classifier("pca_logistic", net, label_names or [str(i) for i in range(n_labels)], pca=pca,
                      pca_dims=dims, trace=trace)
