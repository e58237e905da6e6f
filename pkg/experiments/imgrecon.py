"""
MaxEnt image reconstruction from low-frequency DCT coefficients.

A square grayscale image is reduced to the top-left keep x keep block of its
orthonormal 2-D DCT. Two reconstructions are compared against the original:
the linear one (inverse DCT of the zero-padded block) and the MaxEnt one,
which solves the saddle-point equation with the activation of the chosen data
range so that the result honors every kept coefficient and stays in range.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from maxent.activations import ActivationKind, DataRange, Variant
from maxent.errors import ConfigError, DataError, NumericalError
from maxent.linop import TruncatedDct2D, least_squares_reconstruction
from maxent.saddle import SaddleOptions, SaddleResult, reconstruct_from_feature
from report.images import read_pgm, write_pgm_grid

logger = logging.getLogger(__name__)

# Pixels are moved half an 8-bit quantization step inside the open range
PIXEL_MARGIN = 0.5 / 256


class ReconstructionFailedError(NumericalError):
    """The MaxEnt saddle solve did not reach the failure tolerance."""


@dataclass
class ImgReconResult:
    original: np.ndarray
    linear: np.ndarray
    maxent: np.ndarray
    solve: SaddleResult
    constraint_error: float

    @property
    def panels(self):
        return [self.original, self.linear, self.maxent]


def default_kind(data_range: DataRange) -> ActivationKind:
    """TED for the unit interval, the exponential prior for positives."""
    data_range = DataRange(data_range)
    if data_range is DataRange.UNIT:
        return ActivationKind.ted()
    if data_range is DataRange.POSITIVES:
        return ActivationKind.exponential()
    raise ConfigError("image reconstruction supports the unit and positives ranges")


def to_range(pixels: np.ndarray, data_range: DataRange) -> np.ndarray:
    """Move [0, 1] pixels strictly inside the data range."""
    if DataRange(data_range) is DataRange.UNIT:
        return PIXEL_MARGIN + (1.0 - 2 * PIXEL_MARGIN) * pixels
    return pixels + PIXEL_MARGIN


def reconstruct_image(
    image: np.ndarray,
    keep: int,
    data_range: DataRange = DataRange.UNIT,
    kind: Optional[ActivationKind] = None,
    opts: Optional[SaddleOptions] = None,
) -> ImgReconResult:
    """
    Linear and MaxEnt reconstructions of an image from its kept DCT block.

    Args:
        image: (side, side) pixels in [0, 1]
        keep: side of the kept coefficient block, 1 <= keep <= side
        data_range: unit or positives
        kind: MaxEnt kind (default_kind(data_range) when None)
        opts: saddle options

    Returns:
        ImgReconResult with the three panels in data-range units

    Raises:
        DataError: non-square image or invalid keep
        ReconstructionFailedError: the saddle solve failed
    """
    data_range = DataRange(data_range)
    kind = kind or default_kind(data_range)
    if kind.data_range is not data_range:
        raise ConfigError(f"kind {kind.name} does not belong to range {data_range.value}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DataError(f"image must be square, got shape {image.shape}")
    side = image.shape[0]
    if not (1 <= keep <= side):
        raise DataError(f"keep must be between 1 and {side}, got {keep}")

    x = to_range(image, data_range).ravel()
    op = TruncatedDct2D(side, side, keep, keep)
    z = op.forward(x)
    linear = least_squares_reconstruction(op, z)
    logger.info("solving MaxEnt reconstruction: %s, %s prior", op, kind.name)
    x_bar, res = reconstruct_from_feature(op, kind, z, opts)
    if res.failed:
        raise ReconstructionFailedError(
            f"MaxEnt reconstruction failed after {res.iterations} iterations "
            f"(residual {res.residual_inf:.3g})"
        )
    err = float(np.max(np.abs(op.forward(x_bar) - z)))
    logger.info("converged in %d iterations, constraint error %.3g", res.iterations, err)
    shape = (side, side)
    return ImgReconResult(
        original=x.reshape(shape),
        linear=linear.reshape(shape),
        maxent=x_bar.reshape(shape),
        solve=res,
        constraint_error=err,
    )


def run_imgrecon(
    image_path: str,
    keep: int,
    data_range: DataRange,
    out_path: str,
    kind: Optional[ActivationKind] = None,
    opts: Optional[SaddleOptions] = None,
) -> ImgReconResult:
    """Read a PGM, reconstruct it and write the 3-panel grid (original, linear, MaxEnt)."""
    image = read_pgm(image_path)
    result = reconstruct_image(image, keep, data_range, kind, opts)
    if DataRange(data_range) is DataRange.UNIT:
        value_range = (0.0, 1.0)
    else:
        value_range = (0.0, float(result.original.max()))
    write_pgm_grid(result.panels, 3, out_path, value_range)
    return result


def kind_from_name(name: Optional[str], data_range: DataRange) -> ActivationKind:
    """Resolve the --kind option of the image demo."""
    if name is None:
        return default_kind(data_range)
    kind = ActivationKind(Variant(name))
    if kind.data_range is not DataRange(data_range):
        raise ConfigError(f"kind {name} is not defined on {DataRange(data_range).value}")
    return kind
