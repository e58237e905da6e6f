"""
Unit tests for models/store.py
Run with: python -m pytest tests/test_model_store.py -v
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import struct

import numpy as np
import pytest

from maxent.activations import ActivationKind, DataRange
from maxent.errors import DataError
from maxent.linop import TruncatedDct2D
from models.store import (
    MAGIC,
    BadMagicError,
    ModelFormatError,
    TruncatedModelError,
    UnsupportedVersionError,
    load_model,
    model_bytes,
    read_model,
    write_model,
)
from network.layers import Layer, Network, NetworkConfig, encode, init_params


def trained_looking_net():
    """Two-layer positives network with nonzero biases and scales."""
    cfg = NetworkConfig(n_input=10, nodes=[5, 2], input_range=DataRange.POSITIVES, sigma_sq=2.0)
    net = init_params(cfg, 4)
    params = net.params()
    rng = np.random.default_rng(1)
    for b in params.biases + params.recon_biases:
        b[:] = rng.standard_normal(b.shape)
    params.scales[:] = [0.7, 1.3]
    return net.with_params(params)


def assert_same_network(a, b):
    assert a.input_range is b.input_range
    assert a.input_kind == b.input_kind
    assert a.dims == b.dims
    for la, lb in zip(a.layers, b.layers):
        assert la.in_kind == lb.in_kind
        assert la.out_activation == lb.out_activation
        assert la.recon_scale == lb.recon_scale
        assert np.array_equal(la.bias, lb.bias)
        assert np.array_equal(la.recon_bias, lb.recon_bias)


def test_dense_round_trip(tmp_path):
    """Every parameter is restored bit for bit."""
    net = trained_looking_net()
    path = str(tmp_path / "model.dpbn")
    write_model(net, path)
    back = read_model(path)
    assert_same_network(net, back)
    for la, lb in zip(net.layers, back.layers):
        assert np.array_equal(la.linmap.weights, lb.linmap.weights)
    assert back.layers[0].in_kind.sigma_sq == 2.0
    assert back.layers[1].out_activation is None


def test_dct_round_trip():
    """A truncated DCT layer is stored by its parameters, not its matrix."""
    kind = ActivationKind.ted()
    layer = Layer(TruncatedDct2D(6, 6, 3, 2), np.zeros(6), kind)
    net = Network([layer], DataRange.UNIT, kind)
    data = model_bytes(net)
    back = load_model(data)
    assert_same_network(net, back)
    lm = back.layers[0].linmap
    assert isinstance(lm, TruncatedDct2D)
    assert (lm.height, lm.width, lm.keep_h, lm.keep_w) == (6, 6, 3, 2)
    x = np.random.default_rng(0).uniform(0.1, 0.9, 36)
    assert np.allclose(encode(net, x).z_top, encode(back, x).z_top, atol=1e-14)


def test_header_layout():
    data = model_bytes(trained_looking_net())
    assert data[:4] == MAGIC
    assert struct.unpack("<II", data[4:12]) == (1, 2)


def test_bad_magic():
    data = model_bytes(trained_looking_net())
    with pytest.raises(BadMagicError):
        load_model(b"XXXX" + data[4:])
    with pytest.raises(BadMagicError):
        load_model(b"DP")


def test_unsupported_version():
    data = bytearray(model_bytes(trained_looking_net()))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError):
        load_model(bytes(data))


def test_truncated():
    data = model_bytes(trained_looking_net())
    for cut in (10, 40, len(data) - 1):
        with pytest.raises(TruncatedModelError):
            load_model(data[:cut])


def test_trailing_bytes():
    data = model_bytes(trained_looking_net())
    with pytest.raises(ModelFormatError):
        load_model(data + b"\x00")


def test_corrupt_files_are_data_errors(tmp_path):
    """Every format error maps to the data-error exit code."""
    path = tmp_path / "bad.dpbn"
    path.write_bytes(b"not a model at all")
    with pytest.raises(DataError) as info:
        read_model(str(path))
    assert info.value.exit_code == 2
    with pytest.raises(FileNotFoundError):
        read_model(str(tmp_path / "missing.dpbn"))


if __name__ == "__main__":
    print("Running model store tests...")

    test_dct_round_trip()
    print("✓ DCT round trip")

    test_bad_magic()
    test_unsupported_version()
    test_truncated()
    test_trailing_bytes()
    print("✓ corrupt inputs")

    print("\nAll tests passed!")
