import logging
import math
from dataclasses import dataclass

import cv2
import numpy as np

from typing import Tuple

from exposure_enhancement.exceptions import InvalidParameter
from exposure_enhancement.illumination import (
    box_lower_bound,
    initial_illumination,
    recover,
)
from exposure_enhancement.raster import RgbImage, ScalarField
from exposure_enhancement.solver import (
    SolveReport,
    SolverConfig,
    estimate_illumination,
    project_box,
)


@dataclass(frozen=True)
class JbuParams:
    """
    Settings of the low resolution solve and the joint bilateral upsampling.

    Args:
      sigma_d (float): spatial standard deviation, in low resolution pixels.
      sigma_r (float): range standard deviation, in illumination units.
        `math.inf` turns the range kernel off.
      window_radius (int): half size of the low resolution window.
      max_dim (int): larger image dimension of the low resolution solve.
    """

    sigma_d: float = 0.5
    sigma_r: float = 0.1
    window_radius: int = 2
    max_dim: int = 400

    def __post_init__(self) -> None:
        if self.sigma_d <= 0 or self.sigma_r <= 0:
            raise InvalidParameter("sigma_d and sigma_r must be positive")
        if self.window_radius < 1:
            raise InvalidParameter("window_radius must be at least 1")
        if self.max_dim < 1:
            raise InvalidParameter("max_dim must be positive")


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def downsample_max_dim(img: RgbImage, max_dim: int) -> RgbImage:
    """
    Area-average an image so that its larger dimension is `max_dim`,
    keeping the aspect ratio. Images already small enough are returned
    unchanged.

    Examples:
      >>> downsample_max_dim(RgbImage(np.zeros((600, 800, 3))), 400).shape
      (300, 400)
    """
    if max(img.width, img.height) <= max_dim:
        return img
    scale = max_dim / max(img.width, img.height)
    width = max(1, _round_half_up(img.width * scale))
    height = max(1, _round_half_up(img.height * scale))
    resized = cv2.resize(img.data, (width, height), interpolation=cv2.INTER_AREA)
    return RgbImage(np.clip(resized, 0.0, 1.0))


def _low_res_coordinates(full: int, low: int) -> np.ndarray:
    return (np.arange(full) + 0.5) * low / full - 0.5


def joint_bilateral_upsample(
    S_low: ScalarField, guide_full: ScalarField, params: JbuParams
) -> ScalarField:
    """
    Upsample a low resolution illumination guided by the full resolution
    initial illumination.

    Every output pixel p is a weighted average of the low resolution samples
    in the (2r+1)x(2r+1) window around its real valued low resolution
    position. A sample q is weighted by a spatial Gaussian of its distance
    to that position and by a range Gaussian of the guide difference between
    p and the full resolution pixel nearest to q. Window samples outside the
    low resolution grid are skipped.

    Args:
      S_low (ScalarField): solved illumination at low resolution.
      guide_full (ScalarField): initial illumination at full resolution.
      params (JbuParams): kernel settings.

    Returns:
      S (ScalarField): illumination at the guide's resolution.
    """
    low_h, low_w = S_low.shape
    full_h, full_w = guide_full.shape
    guide = guide_full.data
    low = S_low.data

    position_y = _low_res_coordinates(full_h, low_h)
    position_x = _low_res_coordinates(full_w, low_w)
    center_y = np.clip(np.floor(position_y + 0.5).astype(int), 0, low_h - 1)
    center_x = np.clip(np.floor(position_x + 0.5).astype(int), 0, low_w - 1)

    spatial_scale = 2.0 * params.sigma_d ** 2
    range_scale = 2.0 * params.sigma_r ** 2
    numerator = np.zeros((full_h, full_w))
    normalizer = np.zeros((full_h, full_w))
    radius = params.window_radius
    for dy in range(-radius, radius + 1):
        sample_y = center_y + dy
        valid_y = (sample_y >= 0) & (sample_y < low_h)
        sample_y = np.clip(sample_y, 0, low_h - 1)
        nearest_y = np.clip(
            np.floor((sample_y + 0.5) * full_h / low_h).astype(int), 0, full_h - 1
        )
        spatial_y = np.exp(-((position_y - sample_y) ** 2) / spatial_scale)
        for dx in range(-radius, radius + 1):
            sample_x = center_x + dx
            valid_x = (sample_x >= 0) & (sample_x < low_w)
            sample_x = np.clip(sample_x, 0, low_w - 1)
            nearest_x = np.clip(
                np.floor((sample_x + 0.5) * full_w / low_w).astype(int), 0, full_w - 1
            )
            spatial_x = np.exp(-((position_x - sample_x) ** 2) / spatial_scale)

            difference = guide - guide[np.ix_(nearest_y, nearest_x)]
            weight = np.outer(spatial_y, spatial_x) * np.exp(-(difference ** 2) / range_scale)
            weight *= np.outer(valid_y, valid_x)
            numerator += weight * low[np.ix_(sample_y, sample_x)]
            normalizer += weight

    return ScalarField(numerator / normalizer)


def estimate_illumination_fast(
    img: RgbImage, solver: SolverConfig = SolverConfig(), jbu: JbuParams = JbuParams()
) -> Tuple[ScalarField, SolveReport]:
    """
    Solve for the illumination at reduced resolution, upsample it with the
    joint bilateral filter and project it onto the full resolution box.
    Falls through to the full resolution solve for small images.
    """
    if max(img.width, img.height) <= jbu.max_dim:
        return estimate_illumination(img, solver)

    small = downsample_max_dim(img, jbu.max_dim)
    logging.info(
        f"solving at {small.width}x{small.height} for a {img.width}x{img.height} image"
    )
    S_low, report = estimate_illumination(small, solver)
    S_full = joint_bilateral_upsample(S_low, initial_illumination(img), jbu)
    S_min = box_lower_bound(img, solver.gamma, solver.color_constraint)
    return project_box(S_full, S_min), report


def enhance_fast(
    img: RgbImage, solver: SolverConfig = SolverConfig(), jbu: JbuParams = JbuParams()
) -> Tuple[RgbImage, ScalarField, SolveReport]:
    """
    Enhance an image through the low resolution solve.

    Args:
      img (RgbImage): underexposed input.
      solver (SolverConfig): solver settings.
      jbu (JbuParams): upsampling settings.

    Returns:
      A tuple of (enhanced image, full resolution illumination, solve report)
    """
    S, report = estimate_illumination_fast(img, solver, jbu)
    enhanced, clamped = recover(img, S, solver.gamma)
    report.clamped_pixels = clamped
    return enhanced, S, report
