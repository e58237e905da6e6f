"""
PGM image grids.

Images are tiled row-major with one-pixel white separators. Pixel values are
mapped linearly from a stated value range to 0..255 (rounded to nearest and
clipped), so a constant 0.5 image in [0, 1] becomes 128.
"""

import logging
import re
from typing import Optional, Sequence, Tuple

import numpy as np

from maxent.errors import DataError

logger = logging.getLogger(__name__)

SEPARATOR = 255
MAXVAL = 255


class PgmFormatError(DataError):
    """File is not a readable PGM image."""


def to_gray(image: np.ndarray, value_range: Tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Map real values to 8-bit gray levels: floor((v - lo)/(hi - lo) * 255 + 0.5), clipped."""
    lo, hi = value_range
    if not hi > lo:
        raise ValueError(f"empty value range {value_range}")
    v = np.asarray(image, dtype=np.float64)
    scaled = np.floor((v - lo) / (hi - lo) * MAXVAL + 0.5)
    scaled = np.nan_to_num(scaled, nan=0.0)
    return np.clip(scaled, 0, MAXVAL).astype(np.uint8)


def tile(
    images: Sequence[np.ndarray],
    columns: int,
    value_range: Tuple[float, float] = (0.0, 1.0),
    shape: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """
    Arrange images in a grid.

    Args:
        images: 2-D arrays, or flat vectors together with `shape`
        columns: images per grid row
        value_range: values mapped to 0 and 255
        shape: (height, width) for flat inputs

    Returns:
        uint8 grid; unfilled cells and separators are white

    Raises:
        ValueError: empty list or inconsistent image sizes
    """
    if len(images) == 0:
        raise ValueError("no images to tile")
    if columns <= 0:
        raise ValueError("columns must be positive")
    imgs = [np.asarray(im, dtype=np.float64) for im in images]
    if shape is not None:
        imgs = [im.reshape(shape) for im in imgs]
    h, w = imgs[0].shape
    if any(im.shape != (h, w) for im in imgs):
        raise ValueError("all images must have the same dimensions")
    cols = min(columns, len(imgs))
    rows = (len(imgs) + cols - 1) // cols
    grid = np.full((rows * (h + 1) - 1, cols * (w + 1) - 1), SEPARATOR, dtype=np.uint8)
    for k, im in enumerate(imgs):
        r, c = divmod(k, cols)
        top, left = r * (h + 1), c * (w + 1)
        grid[top : top + h, left : left + w] = to_gray(im, value_range)
    return grid


def write_pgm(path: str, gray: np.ndarray) -> None:
    """Write a uint8 array as binary PGM (P5, maxval 255)."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_pgm_grid(
    images: Sequence[np.ndarray],
    columns: int,
    path: str,
    value_range: Tuple[float, float] = (0.0, 1.0),
    shape: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """
    Tile images and write the grid as a binary PGM.

    Examples:
        >>> write_pgm_grid([np.full((2, 2), 0.5)], 1, "/tmp/half.pgm")
        array([[128, 128],
               [128, 128]], dtype=uint8)
    """
    grid = tile(images, columns, value_range, shape)
    write_pgm(path, grid)
    logger.info("wrote %d images to %s", len(images), path)
    return grid


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path: str) -> np.ndarray:
    """
    Read a grayscale PGM (binary P5 with 8- or 16-bit samples, or ASCII P2).

    Returns:
        (height, width) float array scaled to [0, 1] by maxval

    Raises:
        PgmFormatError: not a PGM file, or truncated
    """
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PgmFormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P5", b"P2"):
        raise PgmFormatError(f"{path}: not a grayscale PGM (magic {magic!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise PgmFormatError(f"{path}: bad PGM header") from exc
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise PgmFormatError(f"{path}: bad PGM dimensions or maxval")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        if len(data) - pos < n * dtype.itemsize:
            raise PgmFormatError(f"{path}: truncated pixel data")
        pixels = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
    else:
        tokens = data[pos:].split()
        if len(tokens) < n:
            raise PgmFormatError(f"{path}: truncated pixel data")
        pixels = np.array([int(t) for t in tokens[:n]])
    return pixels.reshape(height, width).astype(np.float64) / maxval
