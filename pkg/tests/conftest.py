import os

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from exposure_enhancement.raster import RgbImage


FILES_DIR = os.path.join(os.path.dirname(os.path.realpath(__file__)), "files")


def smooth_noise(shape, sigma, seed, low=0.0, high=1.0):
    """Gaussian-smoothed noise rescaled to [low, high]."""
    rng = np.random.default_rng(seed)
    values = gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    values = (values - values.min()) / (values.max() - values.min())
    return low + (high - low) * values


@pytest.fixture
def make_dimmed():
    """
    Factory for synthetic underexposed images I = R * S with a textured
    reflectance R and a smooth illumination S in [0.2, 0.6].
    """

    def factory(height=32, width=32, seed=0):
        reflectance = np.stack(
            [smooth_noise((height, width), 1.5, seed + c, 0.2, 0.9) for c in range(3)],
            axis=2,
        )
        illumination = smooth_noise((height, width), 8.0, seed + 10, 0.2, 0.6)
        return RgbImage(reflectance * illumination[..., None])

    return factory


@pytest.fixture
def dimmed_image(make_dimmed):
    return make_dimmed()


@pytest.fixture
def make_gray():
    """Factory for images with equal channels."""

    def factory(values):
        values = np.asarray(values, dtype=np.float64)
        return RgbImage(np.repeat(values[..., None], 3, axis=2))

    return factory
