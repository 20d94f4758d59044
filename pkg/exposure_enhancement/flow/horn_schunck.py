import logging
from dataclasses import dataclass

import cv2
import numpy as np
from scipy.ndimage import convolve

from typing import List

from exposure_enhancement.exceptions import InvalidParameter
from exposure_enhancement.flow.base import FlowEstimator, FlowField, sample_grid
from exposure_enhancement.raster import ScalarField, require_same_shape


# Neighbourhood average of the smoothness term
AVERAGING_KERNEL = np.array(
    [
        [1 / 12, 1 / 6, 1 / 12],
        [1 / 6, 0.0, 1 / 6],
        [1 / 12, 1 / 6, 1 / 12],
    ]
)

# Levels are not halved below this size
MIN_LEVEL_SIZE = 16


@dataclass(frozen=True)
class FlowParams:
    """
    Args:
      alpha (float): smoothness weight, on the 8-bit intensity scale.
      iterations (int): Jacobi iterations per pyramid level.
      pyramid_levels (int): number of levels, each half the previous size.
    """

    alpha: float = 10.0
    iterations: int = 100
    pyramid_levels: int = 3

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise InvalidParameter("alpha must be positive")
        if self.iterations < 1 or self.pyramid_levels < 1:
            raise InvalidParameter("iterations and pyramid_levels must be at least 1")


def build_pyramid(values: np.ndarray, levels: int) -> List[np.ndarray]:
    """
    Gaussian pyramid, finest level first.
    """
    pyramid = [values]
    while len(pyramid) < levels and min(pyramid[-1].shape) >= MIN_LEVEL_SIZE:
        pyramid.append(cv2.pyrDown(pyramid[-1]))
    return pyramid


def _gradients(values: np.ndarray):
    grad_y = np.gradient(values, axis=0) if values.shape[0] > 1 else np.zeros_like(values)
    grad_x = np.gradient(values, axis=1) if values.shape[1] > 1 else np.zeros_like(values)
    return grad_y, grad_x


def _upsample_flow(vectors: np.ndarray, shape: tuple) -> np.ndarray:
    height, width = shape
    scale_x = width / vectors.shape[1]
    scale_y = height / vectors.shape[0]
    resized = cv2.resize(vectors, (width, height), interpolation=cv2.INTER_LINEAR)
    resized[..., 0] *= scale_x
    resized[..., 1] *= scale_y
    return resized


class HornSchunck(FlowEstimator):
    """
    Coarse-to-fine Horn-Schunck. At each level the previous frame is warped
    by the current flow estimate and the linearized brightness constancy
    plus smoothness energy is minimized by Jacobi iteration.
    """

    def __init__(self, params: FlowParams = FlowParams()) -> None:
        self.params = params

    def _refine(self, current: np.ndarray, previous: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        base = FlowField(vectors)
        warped = sample_grid(previous, base)
        grad_y, grad_x = _gradients(0.5 * (warped + current))
        grad_t = warped - current
        denominator = self.params.alpha ** 2 + grad_x ** 2 + grad_y ** 2

        u0, v0 = vectors[..., 0], vectors[..., 1]
        u, v = u0.copy(), v0.copy()
        for _ in range(self.params.iterations):
            u_avg = convolve(u, AVERAGING_KERNEL, mode="nearest")
            v_avg = convolve(v, AVERAGING_KERNEL, mode="nearest")
            step = (grad_x * (u_avg - u0) + grad_y * (v_avg - v0) + grad_t) / denominator
            u = u_avg - grad_x * step
            v = v_avg - grad_y * step
        return np.stack([u, v], axis=2)

    def estimate(self, f_cur: ScalarField, f_prev: ScalarField) -> FlowField:
        """
        Estimate the flow from `f_cur` to `f_prev`, both luminance fields in
        [0, 1].
        """
        require_same_shape(f_cur.shape, f_prev.shape, "frames")
        current = build_pyramid(f_cur.data * 255.0, self.params.pyramid_levels)
        previous = build_pyramid(f_prev.data * 255.0, self.params.pyramid_levels)

        vectors = np.zeros(current[-1].shape + (2,))
        for level in range(len(current) - 1, -1, -1):
            if vectors.shape[:2] != current[level].shape:
                vectors = _upsample_flow(vectors, current[level].shape)
            vectors = self._refine(current[level], previous[level], vectors)
        logging.debug(f"flow estimated over {len(current)} levels")

        limit = float(max(f_cur.shape))
        magnitude = np.hypot(vectors[..., 0], vectors[..., 1])
        too_long = magnitude > limit
        if np.any(too_long):
            vectors[too_long] *= (limit / magnitude[too_long])[:, None]
        return FlowField(vectors)


def estimate_flow(
    f_cur: ScalarField, f_prev: ScalarField, params: FlowParams = FlowParams()
) -> FlowField:
    return HornSchunck(params).estimate(f_cur, f_prev)
