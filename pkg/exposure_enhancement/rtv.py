import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import gaussian_filter

from exposure_enhancement.exceptions import InvalidParameter
from exposure_enhancement.raster import ScalarField


class Axis(Enum):
    X = "x"
    Y = "y"


@dataclass(frozen=True)
class RtvParams:
    """
    Parameters of the relative total variation measure.

    Args:
      sigma (float): standard deviation of the Gaussian, in pixels.
      epsilon (float): keeps the reciprocal weights finite.
      window_radius (int): half size of the summation window (7 gives 15x15).
    """

    sigma: float = 3.0
    epsilon: float = 1e-3
    window_radius: int = 7

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise InvalidParameter("sigma must be positive")
        if self.epsilon <= 0:
            raise InvalidParameter("epsilon must be positive")
        if self.window_radius < 1:
            raise InvalidParameter("window_radius must be at least 1")


class RtvWeights:
    """
    The four per-pixel weight rasters of the lagged quadratic objective.
    `ux`/`uy` are the blurred (windowed) terms and `wx`/`wy` the pointwise
    ones.
    """

    def __init__(
        self, ux: ScalarField, wx: ScalarField, uy: ScalarField, wy: ScalarField
    ) -> None:
        self.ux = ux
        self.wx = wx
        self.uy = uy
        self.wy = wy

    def products(self):
        """
        Per-pixel products u*w for the x and y directions.
        """
        return self.ux.data * self.wx.data, self.uy.data * self.wy.data

    def __str__(self) -> str:
        return "<RtvWeights {}x{}>".format(self.ux.width, self.ux.height)


def _diff(values: np.ndarray, axis: Axis) -> np.ndarray:
    if axis is Axis.X:
        return np.diff(values, axis=1, append=values[:, -1:])
    return np.diff(values, axis=0, append=values[-1:, :])


def forward_diff(field: ScalarField, axis: Axis) -> ScalarField:
    """
    Forward difference f(p + d) - f(p). The last column (x) or row (y) is 0.

    Examples:
      >>> forward_diff(ScalarField(np.array([[0.0, 1.0, 3.0]])), Axis.X).data
      array([[1., 2., 0.]])
    """
    return ScalarField(_diff(field.data, Axis(axis)))


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """
    Normalized 1-D Gaussian truncated at radius ceil(3 sigma).
    """
    radius = kernel_radius(sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * x ** 2 / sigma ** 2)
    return kernel / kernel.sum()


def _blur(values: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(values, sigma, mode="nearest", radius=kernel_radius(sigma))


def gaussian_convolve(field: ScalarField, sigma: float) -> ScalarField:
    """
    Separable Gaussian convolution with replicate padding.
    """
    if sigma <= 0:
        raise InvalidParameter("sigma must be positive")
    return ScalarField(_blur(field.data, sigma))


def rtv_weights(S: ScalarField, params: RtvParams) -> RtvWeights:
    """
    Compute the lagged weights for illumination S:

    u = G * (|G * dS| + eps)^-1 and w = (|dS| + eps)^-1, per direction.
    """
    weights = []
    for axis in (Axis.X, Axis.Y):
        gradient = _diff(S.data, axis)
        u = _blur(1.0 / (np.abs(_blur(gradient, params.sigma)) + params.epsilon), params.sigma)
        w = 1.0 / (np.abs(gradient) + params.epsilon)
        weights.extend([ScalarField(u), ScalarField(w)])
    return RtvWeights(*weights)


def window_multiplicity(length: int, radius: int) -> np.ndarray:
    """
    For each position along an axis, the number of in-bounds window centers
    whose window of the given radius covers it.
    """
    position = np.arange(length)
    upper = np.minimum(position + radius, length - 1)
    lower = np.maximum(position - radius, 0)
    return (upper - lower + 1).astype(np.float64)


def rtv_energy(S: ScalarField, params: RtvParams) -> float:
    """
    Total RTV energy: the sum over pixels p of the windowed x and y terms
    H(S_p) + V(S_p), windows clamped to the image.

    Every pixel term is counted once per window covering it, so the double
    sum reduces to a weighted single sum.
    """
    weights = rtv_weights(S, params)
    ax, ay = weights.products()
    terms = ax * _diff(S.data, Axis.X) ** 2 + ay * _diff(S.data, Axis.Y) ** 2
    radius = params.window_radius
    multiplicity = np.outer(
        window_multiplicity(S.height, radius), window_multiplicity(S.width, radius)
    )
    return float(np.sum(terms * multiplicity))
