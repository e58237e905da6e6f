"""
Binary model container.

Little-endian throughout:

    magic            4 bytes  b"DPBN"
    version          u32      (1)
    n_layers         u32
    input_range      u8       0 reals, 1 positives, 2 unit
    input_kind       u8 + f64 variant tag, sigma_sq
    per layer:
        n_in, n_out          u32, u32
        backing              u8       0 dense, 1 truncated 2-D DCT
        out_activation       u8 + f64 variant tag (255 = linear top output), sigma_sq
        in_kind              u8 + f64
        recon_scale          f64
        bias                 n_out x f64
        recon_bias           n_in x f64
        dense:  weights      n_in*n_out x f64, row-major
        dct:    height, width, keep_h, keep_w   4 x u32

Variant tags: 0 linear, 1 truncgauss, 2 exponential, 3 ted.
"""

import io
import logging
import struct
from typing import BinaryIO, Tuple

import numpy as np

from maxent.activations import ActivationKind, DataRange, Variant
from maxent.errors import DataError
from maxent.linop import DenseMap, TruncatedDct2D
from network.layers import Layer, Network

logger = logging.getLogger(__name__)

MAGIC = b"DPBN"
FORMAT_VERSION = 1

_VARIANT_TAGS = [Variant.LINEAR, Variant.TRUNC_GAUSS, Variant.EXPONENTIAL, Variant.TED]
_RANGE_TAGS = [DataRange.REALS, DataRange.POSITIVES, DataRange.UNIT]
_NO_ACTIVATION = 255
_DENSE, _DCT = 0, 1

_HEADER = struct.Struct("<4sIIBBd")
_LAYER_HEAD = struct.Struct("<IIBBdBdd")
_DCT_PARAMS = struct.Struct("<IIII")


class ModelFormatError(DataError):
    """Model file cannot be decoded."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


def _kind_tag(kind) -> Tuple[int, float]:
    if kind is None:
        return _NO_ACTIVATION, 0.0
    return _VARIANT_TAGS.index(kind.variant), float(kind.sigma_sq)


def _tag_kind(tag: int, sigma_sq: float):
    if tag == _NO_ACTIVATION:
        return None
    if tag >= len(_VARIANT_TAGS):
        raise ModelFormatError(f"unknown activation tag {tag}")
    variant = _VARIANT_TAGS[tag]
    if variant is Variant.EXPONENTIAL:
        return ActivationKind.exponential()
    return ActivationKind(variant, sigma_sq)


def dump_model(net: Network, fh: BinaryIO) -> None:
    """Serialize a network to an open binary stream."""
    in_tag, in_sig = _kind_tag(net.input_kind)
    fh.write(
        _HEADER.pack(
            MAGIC, FORMAT_VERSION, net.depth, _RANGE_TAGS.index(net.input_range), in_tag, in_sig
        )
    )
    for layer in net.layers:
        linmap = layer.linmap
        if isinstance(linmap, DenseMap):
            backing = _DENSE
        elif isinstance(linmap, TruncatedDct2D):
            backing = _DCT
        else:
            raise ModelFormatError(f"cannot serialize {type(linmap).__name__}")
        out_tag, out_sig = _kind_tag(layer.out_activation)
        k_tag, k_sig = _kind_tag(layer.in_kind)
        fh.write(
            _LAYER_HEAD.pack(
                layer.n_in, layer.n_out, backing, out_tag, out_sig, k_tag, k_sig, layer.recon_scale
            )
        )
        fh.write(layer.bias.astype("<f8").tobytes())
        fh.write(layer.recon_bias.astype("<f8").tobytes())
        if backing == _DENSE:
            fh.write(np.ascontiguousarray(linmap.weights, dtype="<f8").tobytes())
        else:
            fh.write(_DCT_PARAMS.pack(linmap.height, linmap.width, linmap.keep_h, linmap.keep_w))


def write_model(net: Network, path: str) -> None:
    """
    Write a network to a model file.

    Args:
        net: network to save
        path: destination file (overwritten)
    """
    with open(path, "wb") as fh:
        dump_model(net, fh)
    logger.info("wrote model %s (%d layers)", path, net.depth)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedModelError(
                f"model file truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, file has {len(self.data)})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))

    def floats(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64)


def load_model(data: bytes) -> Network:
    """Decode a network from the bytes of a model file."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"not a model file: magic {data[:4]!r}, expected {MAGIC!r}")
    rd = _Reader(data)
    magic, version, n_layers, range_tag, in_tag, in_sig = rd.unpack(_HEADER, "header")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    if range_tag >= len(_RANGE_TAGS):
        raise ModelFormatError(f"unknown data range tag {range_tag}")
    layers = []
    for i in range(n_layers):
        n_in, n_out, backing, out_tag, out_sig, k_tag, k_sig, scale = rd.unpack(
            _LAYER_HEAD, f"layer {i} header"
        )
        bias = rd.floats(n_out, f"layer {i} bias")
        recon_bias = rd.floats(n_in, f"layer {i} reconstruction bias")
        if backing == _DENSE:
            w = rd.floats(n_in * n_out, f"layer {i} weights").reshape(n_in, n_out)
            linmap = DenseMap(w)
        elif backing == _DCT:
            linmap = TruncatedDct2D(*rd.unpack(_DCT_PARAMS, f"layer {i} DCT parameters"))
            if (linmap.n_in, linmap.n_out) != (n_in, n_out):
                raise ModelFormatError(f"layer {i}: DCT parameters disagree with dimensions")
        else:
            raise ModelFormatError(f"layer {i}: unknown backing tag {backing}")
        layers.append(
            Layer(
                linmap=linmap,
                bias=bias,
                in_kind=_tag_kind(k_tag, k_sig),
                out_activation=_tag_kind(out_tag, out_sig),
                recon_scale=scale,
                recon_bias=recon_bias,
            )
        )
    if rd.pos != len(data):
        raise ModelFormatError(f"{len(data) - rd.pos} trailing bytes after last layer")
    return Network(layers, _RANGE_TAGS[range_tag], _tag_kind(in_tag, in_sig))


def read_model(path: str) -> Network:
    """
    Read a model file written by write_model.

    Raises:
        BadMagicError, UnsupportedVersionError, TruncatedModelError: corrupt file
        FileNotFoundError: missing file
    """
    with open(path, "rb") as fh:
        return load_model(fh.read())


def model_bytes(net: Network) -> bytes:
    buf = io.BytesIO()
    dump_model(net, buf)
    return buf.getvalue()
