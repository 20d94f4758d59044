import abc
import reprlib

import numpy as np
from scipy.ndimage import map_coordinates

from typing import Type, TypeVar

from exposure_enhancement.exceptions import DimensionMismatch, OutOfRangeValue
from exposure_enhancement.raster import ScalarField, require_same_shape


V = TypeVar("V", bound="FlowField")


class FlowField:
    """
    Dense motion between two frames. `vectors[y, x]` is the displacement
    (vx, vy) in pixels from frame t to frame t-1: the content at p in frame
    t sits at p + v in frame t-1.

    Args:
      vectors (ndarray): array of shape (height, width, 2), finite.
    """

    def __init__(self, vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 3 or vectors.shape[2] != 2:
            raise DimensionMismatch(
                "expected an array of shape (H, W, 2), got {}".format(vectors.shape)
            )
        if not np.all(np.isfinite(vectors)):
            raise OutOfRangeValue("flow contains non-finite values")
        self.vectors = vectors

    @classmethod
    def zeros(cls: Type[V], width: int, height: int) -> V:
        return cls(np.zeros((height, width, 2)))

    @property
    def vx(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def vy(self) -> np.ndarray:
        return self.vectors[..., 1]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def __str__(self) -> str:
        return "<FlowField {}x{}>".format(self.width, self.height)

    def __repr__(self) -> str:
        return "FlowField({})".format(reprlib.repr(self.vectors))


class FlowEstimator(abc.ABC):
    """
    FlowEstimator enables pluggable motion estimation: we take the current
    and previous luminance frames, and return the flow from the current
    frame to the previous one.
    """

    @abc.abstractmethod
    def estimate(self, f_cur: ScalarField, f_prev: ScalarField) -> FlowField:
        """Method to estimate dense flow from f_cur to f_prev"""


def sample_grid(values: np.ndarray, flow: FlowField) -> np.ndarray:
    rows, cols = np.mgrid[0 : flow.height, 0 : flow.width].astype(np.float64)
    return map_coordinates(
        values, [rows + flow.vy, cols + flow.vx], order=1, mode="nearest"
    )


def warp(field: ScalarField, flow: FlowField) -> ScalarField:
    """
    Bilinearly sample `field` at p + v_p for every pixel p. Samples outside
    the frame are clamped to the border.

    Examples:
      >>> ramp = ScalarField(np.tile(np.arange(4.0), (2, 1)))
      >>> shift = FlowField(np.tile([1.0, 0.0], (2, 4, 1)))
      >>> warp(ramp, shift).data[0]
      array([1., 2., 3., 3.])
    """
    require_same_shape(field.shape, flow.shape, "field and flow")
    return ScalarField(sample_grid(field.data, flow))
