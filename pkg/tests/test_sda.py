import numpy as np
import pytest

from atdl.network import TrainConfig
from atdl.numerics import Rng
from atdl.sda import (CorruptionSpec, SourceModel, attach_output, build_source_model, corrupt, finetune_source,
                      one_hot, pretrain_layer, stack_pretrain, _fit_autoencoder)


def test_corruption_rate_zero_is_identity():
    x = np.linspace(0, 1, 50)
    assert np.array_equal(corrupt(x, CorruptionSpec("masking", 0.0), Rng(0)), x)
    assert np.array_equal(corrupt(x, CorruptionSpec("gaussian", 0.0), Rng(0)), x)


def test_masking_fraction_concentrates():
    out = corrupt(np.ones(10_000), CorruptionSpec("masking", 0.3), Rng(5))
    assert 0.28 <= np.mean(out == 0) <= 0.32
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_gaussian_noise_scale():
    out = corrupt(np.zeros(20_000), CorruptionSpec("gaussian", 0.2), Rng(1))
    assert abs(out.std() - 0.2) < 0.01


def test_corruption_spec_validation():
    with pytest.raises(ValueError):
        CorruptionSpec("masking", 1.0)
    with pytest.raises(ValueError):
        CorruptionSpec("gaussian", -0.1)
    with pytest.raises(ValueError):
        CorruptionSpec("salt", 0.1)


def test_identity_toy_reconstructs():
    # A 4-unit bottleneck on 4 one-hot patterns has local minima where two
    # patterns share a code (loss 0.25); the seed fixes an initialization
    # that starts in the identity basin.
    x = np.tile(np.eye(4), (25, 1))
    cfg = TrainConfig(lambda0=0.1, mu_final=0.9, epochs=300, seed=3)
    _, trace = _fit_autoencoder(x, 4, CorruptionSpec("masking", 0.0), cfg)
    assert trace[-1] < 0.05
    assert np.mean(trace[-5:]) < trace[0]


def test_pretrain_zero_epochs_returns_init():
    x = np.random.default_rng(0).uniform(size=(10, 6))
    w, b = pretrain_layer(x, 3, cfg=TrainConfig(epochs=0, seed=4))
    w2, b2 = pretrain_layer(x, 3, cfg=TrainConfig(epochs=0, seed=4))
    assert np.array_equal(w, w2) and np.all(b == 0)


def test_pretrain_deterministic():
    x = np.random.default_rng(0).uniform(size=(30, 6))
    cfg = TrainConfig(epochs=3, seed=7)
    a = pretrain_layer(x, 4, cfg=cfg)
    b = pretrain_layer(x, 4, cfg=cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_stack_shapes_and_range():
    x = np.random.default_rng(1).uniform(size=(12, 2332))
    stack = stack_pretrain(x, [188, 188, 188], cfg=TrainConfig(epochs=1, minibatch=4))
    assert stack.dims == [2332, 188, 188, 188]
    h = stack.predict(x)
    assert np.all((h > 0) & (h < 1))
    assert len(stack.tags["pretrain_traces"]) == 3


def test_single_layer_stack_equals_pretrain_layer():
    x = np.random.default_rng(3).uniform(size=(20, 5))
    cfg = TrainConfig(epochs=2, seed=6)
    stack = stack_pretrain(x, [3], cfg=cfg)
    from atdl.numerics import derive_seed
    w, b = pretrain_layer(x, 3, cfg=cfg.with_(seed=derive_seed(6, 0)))
    assert np.array_equal(stack.weights[0], w) and np.array_equal(stack.biases[0], b)


def test_greedy_stage_does_not_touch_lower_layers():
    x = np.random.default_rng(3).uniform(size=(20, 5))
    cfg = TrainConfig(epochs=2, seed=6)
    one = stack_pretrain(x, [4], cfg=cfg)
    two = stack_pretrain(x, [4, 3], cfg=cfg)
    assert np.array_equal(one.weights[0], two.weights[0])


def test_finetune_source_separable(blobs):
    x, y = blobs
    stack = stack_pretrain(x, [6], cfg=TrainConfig(epochs=5, seed=1))
    model = finetune_source(stack, x, one_hot(y, 2), TrainConfig(epochs=60, lambda0=0.05, mu_final=0.9, seed=1))
    assert model.net.output_activation == "linear"
    assert np.mean(np.argmax(model.outputs(x), axis=1) == y) == 1.0
    soft = finetune_source(stack, x, one_hot(y, 2), TrainConfig(epochs=60, lambda0=0.05, mu_final=0.9, seed=1),
                           output="softmax")
    assert np.mean(np.argmax(soft.outputs(x), axis=1) == y) == 1.0


def test_ten_class_output_dim():
    x = np.random.default_rng(0).uniform(size=(30, 8))
    y = np.arange(30) % 10
    model = build_source_model(x, y, 10, [5], CorruptionSpec(), TrainConfig(epochs=1), TrainConfig(epochs=1))
    assert model.net.output_dim == 10 and model.net.dims == [8, 5, 10]
    assert "config" in model.provenance


def test_zero_epoch_finetune_keeps_stack():
    x = np.random.default_rng(0).uniform(size=(10, 4))
    stack = stack_pretrain(x, [3], cfg=TrainConfig(epochs=1))
    model = finetune_source(stack, x, one_hot(np.arange(10) % 2, 2), TrainConfig(epochs=0, seed=3))
    assert np.array_equal(model.net.weights[0], stack.weights[0])
    init = attach_output(stack, 2, "linear", 3)
    assert model.net.parameters_equal(init)
    assert isinstance(model, SourceModel)
