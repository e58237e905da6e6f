"""
Unit tests for models/train.py
Run with: python -m pytest tests/test_train.py -v
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest

from maxent.activations import DataRange
from maxent.saddle import SaddleOptions
from models.gradients import Decoder, GradMode, batch_loss, loss_and_gradients
from models.train import Hyperparams, TrainingDivergedError, _sgd_step, evaluate, train
from network.layers import NetworkConfig, ParamSet, init_params
from report.metrics import METRIC_COLUMNS


def unit_data(n=40, dim=8, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, (n, dim))


def subspace_data(n=60, dim=8, rank=2, seed=0):
    """Real-valued vectors lying in a rank-2 subspace."""
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((dim, rank)))[0]
    return rng.standard_normal((n, rank)) @ basis.T


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(learning_rate=0.0, epochs=1)
    with pytest.raises(ValueError):
        Hyperparams(learning_rate=0.1, epochs=1, momentum=1.0)
    with pytest.raises(ValueError):
        Hyperparams(learning_rate=0.1, epochs=0)
    with pytest.raises(ValueError):
        Hyperparams(learning_rate=0.1, epochs=1, l2_weight=-1.0)


def test_history_layout():
    """One train and one test row per epoch, in METRIC_COLUMNS order."""
    x = unit_data()
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.UNIT)
    hyper = Hyperparams(learning_rate=0.05, epochs=2, batch_size=10, record_time=False)
    report = train(init_params(cfg, 0), x[:30], x[30:], hyper, Decoder.DPBN)
    assert list(report.history.columns) == METRIC_COLUMNS
    assert list(report.history["split"]) == ["train", "test", "train", "test"]
    assert list(report.history["epoch"]) == [1, 1, 2, 2]
    assert (report.history["seconds"] == 0.0).all()
    # one-layer encodings are always feasible
    assert (report.history["sampling_efficiency"] == 1.0).all()
    assert report.restarts == 0
    assert report.last("test")["epoch"] == 2


def test_training_is_deterministic():
    """A fixed seed gives identical metrics and parameters."""
    x = unit_data()
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.UNIT)
    hyper = Hyperparams(
        learning_rate=0.05,
        epochs=2,
        batch_size=10,
        seed=3,
        record_time=False,
        grad_mode=GradMode.unrolled(2),
    )
    a = train(init_params(cfg, 1), x[:30], x[30:], hyper, "dpbn")
    b = train(init_params(cfg, 1), x[:30], x[30:], hyper, "dpbn")
    pd.testing.assert_frame_equal(a.history, b.history)
    for pa, pb in zip(a.net.params().arrays(), b.net.params().arrays()):
        assert np.array_equal(pa, pb)


def test_linear_aec_learns_subspace():
    """Tied linear AEC on rank-2 data: error drops after training."""
    x = subspace_data()
    cfg = NetworkConfig(n_input=8, nodes=[2], input_range=DataRange.REALS)
    net = init_params(cfg, 0)
    before = evaluate(net, x, Decoder.AEC)["mse"]
    hyper = Hyperparams(learning_rate=0.01, epochs=20, batch_size=10)
    report = train(net, x, None, hyper, Decoder.AEC)
    after = evaluate(report.net, x, Decoder.AEC)
    assert after["mse"] < before
    assert after["sampling_efficiency"] == 1.0
    assert set(report.history["split"]) == {"train"}


def test_restart_on_low_efficiency():
    """Multi-layer D-PBN restarts with halved weight scale, at most max_restarts times."""
    x = unit_data(n=20)
    cfg = NetworkConfig(n_input=8, nodes=[4, 2], input_range=DataRange.UNIT)
    scales = []

    def reinit(scale):
        scales.append(scale)
        return init_params(cfg, 0, weight_scale=scale)

    # efficiency can never reach 1.01, so every allowed restart happens
    hyper = Hyperparams(
        learning_rate=0.01, epochs=1, batch_size=10, max_restarts=2, restart_efficiency=1.01
    )
    report = train(init_params(cfg, 0), x, None, hyper, Decoder.DPBN, reinit=reinit)
    assert scales == [0.5, 0.25]
    assert report.restarts == 2


def test_no_restart_for_aec_or_single_layer():
    x = unit_data(n=20)
    hyper = Hyperparams(learning_rate=0.01, epochs=1, batch_size=10, restart_efficiency=1.01)
    calls = []

    def reinit(scale):
        calls.append(scale)
        return init_params(cfg, 0, weight_scale=scale)

    cfg = NetworkConfig(n_input=8, nodes=[4, 2], input_range=DataRange.UNIT)
    assert train(init_params(cfg, 0), x, None, hyper, "aec", reinit=reinit).restarts == 0
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.UNIT)
    assert train(init_params(cfg, 0), x, None, hyper, "dpbn", reinit=reinit).restarts == 0
    assert calls == []


def test_divergence_raises():
    """An absurd learning rate blows the parameters up."""
    x = subspace_data()
    cfg = NetworkConfig(n_input=8, nodes=[2], input_range=DataRange.REALS)
    hyper = Hyperparams(learning_rate=1e6, epochs=5, batch_size=10)
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingDivergedError) as info:
            train(init_params(cfg, 0), x, None, hyper, Decoder.AEC)
    assert info.value.epoch >= 1
    assert info.value.exit_code == 3


def test_on_epoch_callback():
    x = unit_data()
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.UNIT)
    seen = []
    hyper = Hyperparams(learning_rate=0.05, epochs=3, batch_size=20)
    net = init_params(cfg, 0)
    train(net, x, None, hyper, "aec", on_epoch=lambda e, h: seen.append((e, len(h))))
    assert seen == [(1, 1), (2, 2), (3, 3)]


def test_l2_weight_decays_weights_only():
    """With zero loss gradient a step shrinks W by lr * l2 and leaves the rest alone."""
    cfg = NetworkConfig(n_input=8, nodes=[4, 2], input_range=DataRange.UNIT)
    params = init_params(cfg, 0).params()
    for b in params.biases:
        b[:] = 0.3
    before = ParamSet.zeros_like(params)
    for dst, src in zip(before.arrays(), params.arrays()):
        dst[...] = src
    velocity = ParamSet.zeros_like(params)
    hyper = Hyperparams(learning_rate=0.1, epochs=1, momentum=0.0, l2_weight=0.5)
    _sgd_step(params, ParamSet.zeros_like(params), velocity, hyper)
    for w, w0 in zip(params.weights, before.weights):
        assert np.allclose(w, 0.95 * w0, rtol=0, atol=1e-14)
    for v, w0 in zip(velocity.weights, before.weights):
        assert np.allclose(v, -0.05 * w0, rtol=0, atol=1e-14)
    for b, b0 in zip(params.biases, before.biases):
        assert np.array_equal(b, b0)
    assert np.array_equal(params.scales, before.scales)
    for rb, rb0 in zip(params.recon_biases, before.recon_biases):
        assert np.array_equal(rb, rb0)


def weight_norm_sq(net):
    return sum(float(np.sum(w * w)) for w in net.params().weights)


def test_l2_weight_changes_training():
    """Weight decay ends training with smaller weights than the same run without it."""
    x = unit_data()
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.UNIT)
    plain = Hyperparams(learning_rate=0.05, epochs=3, batch_size=10, record_time=False)
    decayed = Hyperparams(
        learning_rate=0.05, epochs=3, batch_size=10, record_time=False, l2_weight=0.5
    )
    a = train(init_params(cfg, 0), x, None, plain, Decoder.AEC)
    b = train(init_params(cfg, 0), x, None, decayed, Decoder.AEC)
    assert weight_norm_sq(b.net) < weight_norm_sq(a.net)


@pytest.mark.parametrize("decoder", [Decoder.AEC, Decoder.DPBN], ids=lambda d: d.value)
def test_small_step_descends_along_gradient(decoder):
    """A step of lr against the gradient changes the loss by about -lr * |grad|^2."""
    rng = np.random.default_rng(7)
    x = subspace_data(n=12, rank=3, seed=2) + 0.1 * rng.standard_normal((12, 8))
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.REALS)
    net = init_params(cfg, 1)
    opts = SaddleOptions(residual_tol=1e-13, fail_tol=1e-8)
    result, grads = loss_and_gradients(net, x, decoder, GradMode.implicit(), opts)
    lr = 1e-6
    params = net.params()
    hyper = Hyperparams(learning_rate=lr, epochs=1, momentum=0.0)
    _sgd_step(params, grads, ParamSet.zeros_like(params), hyper)
    after = batch_loss(net.with_params(params), x, decoder, opts).mse
    expected = -lr * grads.norm_sq()
    assert expected < 0
    assert abs((after - result.mse) - expected) <= 1e-2 * abs(expected)


def test_linear_dpbn_train_mse_decreases():
    """One-layer Linear D-PBN, small lr, full batches: train MSE falls every epoch."""
    rng = np.random.default_rng(3)
    x = subspace_data(n=40, rank=3, seed=4) + 0.2 * rng.standard_normal((40, 8))
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.REALS)
    net = init_params(cfg, 2)
    start = evaluate(net, x, Decoder.DPBN)["mse"]
    hyper = Hyperparams(
        learning_rate=0.01, epochs=5, batch_size=40, momentum=0.0, record_time=False
    )
    report = train(net, x, None, hyper, Decoder.DPBN)
    mse = [start] + list(report.history["mse"])
    assert len(mse) == 6
    assert all(b < a for a, b in zip(mse, mse[1:])), mse


def test_evaluate_chunks_agree():
    """Chunk size does not change the evaluation."""
    x = unit_data(n=25)
    cfg = NetworkConfig(n_input=8, nodes=[3], input_range=DataRange.UNIT)
    net = init_params(cfg, 0)
    full = evaluate(net, x, Decoder.DPBN)
    small = evaluate(net, x, Decoder.DPBN, chunk=4)
    assert full["n"] == small["n"] == 25
    assert abs(full["mse"] - small["mse"]) < 1e-12


if __name__ == "__main__":
    print("Running training tests...")

    test_history_layout()
    print("✓ history layout")

    test_training_is_deterministic()
    print("✓ determinism")

    test_restart_on_low_efficiency()
    print("✓ restart")

    print("\nAll tests passed!")
