import logging
from enum import Enum

import numpy as np

from typing import Tuple

from exposure_enhancement.illumination import recover
from exposure_enhancement.multiscale import JbuParams, enhance_fast
from exposure_enhancement.raster import RgbImage, ScalarField
from exposure_enhancement.solver import SolveReport, SolverConfig, estimate_illumination


class EnhanceMode(Enum):
    """
    EnhanceMode selects between the full resolution solve and the low
    resolution solve followed by joint bilateral upsampling.
    """

    FAST = "fast"
    NAIVE = "naive"


def enhance_photo(
    img: RgbImage,
    solver: SolverConfig = SolverConfig(),
    jbu: JbuParams = JbuParams(),
    mode: EnhanceMode = EnhanceMode.FAST,
) -> Tuple[RgbImage, ScalarField, SolveReport]:
    """
    Enhance an underexposed photo.

    Args:
      img (RgbImage): input image.
      solver (SolverConfig): solver settings.
      jbu (JbuParams): settings of the fast path, ignored in naive mode.
      mode (EnhanceMode): fast or naive.

    Returns:
      A tuple of (enhanced image, illumination, solve report)

    Examples:
      >>> white = RgbImage(np.ones((4, 4, 3)))
      >>> out, _, _ = enhance_photo(white)
      >>> bool(np.allclose(out.data, 1.0))
      True
    """
    mode = EnhanceMode(mode)
    if mode is EnhanceMode.FAST:
        return enhance_fast(img, solver, jbu)

    S, report = estimate_illumination(img, solver)
    enhanced, clamped = recover(img, S, solver.gamma)
    report.clamped_pixels = clamped
    return enhanced, S, report


def enhance_per_channel(
    img: RgbImage,
    solver: SolverConfig = SolverConfig(),
    jbu: JbuParams = JbuParams(),
    mode: EnhanceMode = EnhanceMode.FAST,
) -> RgbImage:
    """
    Estimate an illumination for each RGB channel separately and recover
    each channel with its own illumination. Partially removes a global
    color cast, at the price of three solves.
    """
    channels = []
    for index in range(3):
        gray = RgbImage(np.repeat(img.data[..., index : index + 1], 3, axis=2))
        enhanced, _, report = enhance_photo(gray, solver, jbu, mode)
        logging.debug(f"channel {index}: {report.outer_iterations} iterations")
        channels.append(enhanced.data[..., index])
    return RgbImage(np.clip(np.stack(channels, axis=2), 0.0, 1.0))


def correct_overexposure(
    img: RgbImage,
    solver: SolverConfig = SolverConfig(),
    jbu: JbuParams = JbuParams(),
    mode: EnhanceMode = EnhanceMode.FAST,
) -> RgbImage:
    """
    Correct an overexposed image by enhancing its inverse: 1 - enhance(1 - I).
    """
    inverted = RgbImage(1.0 - img.data)
    enhanced, _, _ = enhance_photo(inverted, solver, jbu, mode)
    return RgbImage(np.clip(1.0 - enhanced.data, 0.0, 1.0))
