import logging
from dataclasses import dataclass

import numpy as np

from typing import Tuple

from exposure_enhancement.exceptions import InvalidParameter, OutOfRangeValue
from exposure_enhancement.raster import RgbImage, ScalarField, require_same_shape


# Channels may exceed 1 by this much before recovery counts a pixel as clamped.
GAMUT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GammaParams:
    """
    Gamma adjustment applied when recovering the enhanced image.

    Args:
      gamma (float): exponent in (0, 1].
      s_floor (float): smallest illumination value allowed, keeps division
        away from zero on black pixels.
    """

    gamma: float = 0.6
    s_floor: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidParameter("gamma must be in (0,1]")
        if not 0.0 < self.s_floor < 1.0:
            raise InvalidParameter("s_floor must be in (0,1)")


def initial_illumination(img: RgbImage) -> ScalarField:
    """
    Initial illumination: the maximum over the RGB channels of each pixel.
    """
    return ScalarField(img.data.max(axis=2))


def s_min_map(img: RgbImage, params: GammaParams) -> ScalarField:
    """
    Per-pixel lower bound on illumination that keeps the recovered pixel
    inside the gamut: the channel maximum raised to 1/gamma, floored at
    `s_floor`.

    Examples:
      >>> img = RgbImage(np.full((1, 1, 3), 0.5))
      >>> round(float(s_min_map(img, GammaParams()).data[0, 0]), 4)
      0.315
    """
    bound = np.power(img.data.max(axis=2), 1.0 / params.gamma)
    return ScalarField(np.clip(bound, params.s_floor, 1.0))


def box_lower_bound(img: RgbImage, params: GammaParams, color_constraint: bool = True) -> ScalarField:
    """
    Lower bound of the illumination box. Without the color constraint only
    the `s_floor` clamp remains.
    """
    if color_constraint:
        return s_min_map(img, params)
    return ScalarField.constant(img.width, img.height, params.s_floor)


def gamma_map(S: ScalarField, params: GammaParams) -> ScalarField:
    """
    Per-pixel power S**gamma. Monotone and maps (0, 1] onto (0, 1].
    """
    if S.data.min() <= 0.0:
        raise OutOfRangeValue("illumination must be positive for the gamma map")
    return ScalarField(np.power(S.data, params.gamma))


def recover(img: RgbImage, S: ScalarField, params: GammaParams) -> Tuple[RgbImage, int]:
    """
    Recover the enhanced image R = I / S**gamma.

    When S respects the per-pixel lower bound no channel leaves [0, 1]. The
    final clamp only guards against solver bugs, so the number of pixels it
    touched is returned alongside the image.

    Args:
      img (RgbImage): observed image.
      S (ScalarField): illumination, same size as `img`, values in [s_floor, 1].
      params (GammaParams): gamma settings.

    Returns:
      A tuple of (enhanced image, clamped pixel count)
    """
    require_same_shape(img.shape, S.shape, "image and illumination")
    denominator = gamma_map(S, params).data
    enhanced = img.data / denominator[..., None]

    out_of_gamut = np.any(
        (enhanced > 1.0 + GAMUT_TOLERANCE) | (enhanced < 0.0), axis=2
    )
    clamped = int(np.count_nonzero(out_of_gamut))
    if clamped:
        logging.warning(f"recovery clamped {clamped} pixels to [0, 1]")
    return RgbImage(np.clip(enhanced, 0.0, 1.0)), clamped
