"""
Ingestion of MNIST digits.

IDX files (plain or gzipped) are parsed into RawMnist; a subset of classes is
selected; the quantized pixels are "gaussianified" (dithered away from the
quantization levels and passed through the inverse sigmoid) and finally mapped
into the target data range with a MaxEnt activation.

Every stage is deterministic: the dither of sample i is drawn from its own
generator seeded by (seed, i), so processing a subset gives exactly the same
values as processing the whole file and slicing.
"""

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from maxent.activations import ActivationKind, Variant, lam, validate_range
from maxent.errors import ConfigError, DataError, RangeViolationError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

# Half a quantization step of 8-bit pixels
DEFAULT_DITHER_MEAN = 0.5 / 255
DEFAULT_CLAMP_EPS = 1e-6
LOGIT_CLIP = 10.0

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(DataError):
    """Malformed IDX file."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class InsufficientSamplesError(DataError):
    """A requested class has fewer samples than asked for."""


@dataclass
class RawMnist:
    """Images (count x rows x cols, uint8), labels and their original file positions."""

    images: np.ndarray
    labels: np.ndarray
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def pixels(self) -> np.ndarray:
        """Flattened images scaled to [0, 1]."""
        return self.images.reshape(len(self), -1).astype(np.float64) / 255.0


@dataclass
class Dataset:
    """Range-mapped vectors with labels and a record of how they were produced."""

    vectors: np.ndarray
    labels: np.ndarray
    kind: ActivationKind
    provenance: Dict = field(default_factory=dict)

    @property
    def data_range(self):
        return self.kind.data_range

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _open(path: str):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path: str, expected_magic: Optional[int] = None) -> np.ndarray:
    """
    Parse an unsigned-byte IDX file.

    The header is a big-endian u32 magic (0x0000080D with D dimensions) followed
    by D big-endian u32 sizes.

    Args:
        path: file path, gzip-compressed when it ends in .gz
        expected_magic: reject any other magic (2051 images, 2049 labels)

    Returns:
        uint8 array with the stored shape

    Raises:
        IdxMagicError: wrong or unsupported magic
        IdxTruncatedError: fewer bytes than the header promises
    """
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    if magic >> 8 != 0x08:
        raise IdxMagicError(f"{path}: magic {magic} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxTruncatedError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", data[4:header])
    n = int(np.prod(shape, dtype=np.int64))
    if len(data) - header < n:
        raise IdxTruncatedError(f"{path}: expected {n} data bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=header).reshape(shape).copy()


def write_idx(path: str, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (gzipped when the path ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    head = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(head)
        fh.write(array.tobytes())


def read_mnist(images_path: str, labels_path: str) -> RawMnist:
    """
    Read an image file and its label file.

    Raises:
        IdxCountMismatchError: image and label counts differ
    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images in {images_path} "
            f"but {labels.shape[0]} labels in {labels_path}"
        )
    logger.info("read %d images of %dx%d from %s", *images.shape, images_path)
    return RawMnist(images=images, labels=labels)


def default_paths(mnist_dir: str) -> Dict[str, str]:
    """The four standard file paths in a directory, preferring uncompressed files."""
    out = {}
    for key, name in MNIST_FILES.items():
        plain = os.path.join(mnist_dir, name)
        gz = plain + ".gz"
        out[key] = gz if not os.path.exists(plain) and os.path.exists(gz) else plain
    return out


def select_subset(
    train: RawMnist,
    test: RawMnist,
    labels: Iterable[int] = (3, 8, 9),
    per_class_train: int = 500,
) -> Tuple[RawMnist, RawMnist]:
    """
    Keep a few digit classes.

    Training keeps the first per_class_train samples of each class, test keeps
    every sample of the classes; both stay in file order.

    Raises:
        InsufficientSamplesError: a class has too few training samples or no test samples
    """
    labels = [int(c) for c in labels]
    keep = np.zeros(len(train), dtype=bool)
    for c in labels:
        where = np.flatnonzero(train.labels == c)
        if where.size < per_class_train:
            raise InsufficientSamplesError(
                f"class {c} has {where.size} training samples, {per_class_train} requested"
            )
        keep[where[:per_class_train]] = True
    test_keep = np.isin(test.labels, labels)
    for c in labels:
        if not np.any(test.labels == c):
            raise InsufficientSamplesError(f"class {c} has no test samples")
    return _take(train, keep), _take(test, test_keep)


def _take(raw: RawMnist, mask: np.ndarray) -> RawMnist:
    return RawMnist(images=raw.images[mask], labels=raw.labels[mask], indices=raw.indices[mask])


def gaussianify(
    pixels: np.ndarray,
    seed: int,
    dither_mean: float = DEFAULT_DITHER_MEAN,
    eps: float = DEFAULT_CLAMP_EPS,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Turn quantized pixels into smooth unconstrained values.

    Pixels above 0.5 are pushed down and pixels at or below 0.5 pushed up by an
    exponential random amount of mean dither_mean, clamped to [eps, 1 - eps],
    passed through the logit and clipped to [-10, 10].

    Args:
        pixels: (count, N) values in [0, 1]
        seed: dither seed
        dither_mean: mean of the exponential dither (0 disables dithering)
        eps: clamp before the logit
        indices: original sample indices (default 0..count-1) keying the per-sample RNG

    Returns:
        (count, N) array of finite values in [-10, 10]

    Raises:
        DataError: pixels outside [0, 1]
    """
    p = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0 or p.max(initial=0.0) > 1:
        raise DataError("pixels must lie in [0, 1]")
    if indices is None:
        indices = range(p.shape[0])
    d = np.zeros_like(p)
    if dither_mean > 0:
        for row, idx in enumerate(indices):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(idx),)))
            d[row] = rng.exponential(dither_mean, size=p.shape[1])
    moved = np.where(p > 0.5, p - d, p + d)
    moved = np.clip(moved, eps, 1.0 - eps)
    return np.clip(special.logit(moved), -LOGIT_CLIP, LOGIT_CLIP)


def map_to_range(g: np.ndarray, kind: ActivationKind) -> np.ndarray:
    """
    Map unconstrained values into a data range with the range's MaxEnt activation.

    Raises:
        ConfigError: the exponential kind (it is not defined for a >= 0)
        RangeViolationError: the result leaves the range (g far too extreme)
    """
    if kind.variant is Variant.EXPONENTIAL:
        raise ConfigError("map_to_range needs a kind defined on the whole real line")
    x = np.asarray(lam(kind, np.asarray(g, dtype=np.float64)))
    report = validate_range(kind.data_range, x)
    if not report:
        raise RangeViolationError(
            f"{len(report.violations)} mapped values outside {kind.data_range.value}",
            report.violations,
        )
    return x


def prepare_dataset(
    raw: RawMnist,
    kind: ActivationKind,
    seed: int,
    dither_mean: float = DEFAULT_DITHER_MEAN,
    eps: float = DEFAULT_CLAMP_EPS,
) -> Dataset:
    """Gaussianify and range-map a (subset of a) raw MNIST split."""
    g = gaussianify(raw.pixels(), seed, dither_mean, eps, raw.indices)
    vectors = map_to_range(g, kind)
    return Dataset(
        vectors=vectors,
        labels=raw.labels.copy(),
        kind=kind,
        provenance={
            "seed": seed,
            "dither_mean": dither_mean,
            "clamp_eps": eps,
            "kind": kind.name,
            "sigma_sq": kind.sigma_sq,
            "n_samples": len(raw),
        },
    )


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Prepare an MNIST subset and print statistics")
    parser.add_argument("mnist_dir", help="Directory with the four MNIST IDX files")
    parser.add_argument("--range", default="unit", choices=["reals", "positives", "unit"])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    paths = default_paths(args.mnist_dir)
    tr = read_mnist(paths["train_images"], paths["train_labels"])
    te = read_mnist(paths["test_images"], paths["test_labels"])
    tr, te = select_subset(tr, te)
    k = ActivationKind.for_range(args.range)
    ds = prepare_dataset(tr, k, args.seed)
    print(f"Training subset: {len(ds)} vectors of length {ds.vectors.shape[1]}")
    print(f"Test subset: {len(te)} samples")
    print(f"Value range: [{ds.vectors.min():.4g}, {ds.vectors.max():.4g}]")
