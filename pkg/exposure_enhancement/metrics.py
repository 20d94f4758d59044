import numpy as np
from scipy.stats import entropy

from typing import Tuple

from exposure_enhancement.raster import (
    RgbImage,
    VideoSequence,
    luminance,
    quantize,
    require_same_shape,
)


# Returned by psnr for identical images
PSNR_CAP = 99.0


def gray_levels(img: RgbImage) -> np.ndarray:
    """
    8-bit grayscale levels of an image (luma, rounded half up).
    """
    return quantize(luminance(img).data)


def discrete_entropy(img: RgbImage) -> float:
    """
    Shannon entropy, in bits, of the 256-bin grayscale histogram.

    Examples:
      >>> discrete_entropy(RgbImage(np.full((4, 4, 3), 0.5)))
      0.0
    """
    histogram = np.bincount(gray_levels(img).ravel(), minlength=256)
    return float(entropy(histogram, base=2))


def psnr(a: RgbImage, b: RgbImage) -> float:
    """
    Peak signal-to-noise ratio over all channels, for a peak value of 1.
    Identical images return `PSNR_CAP`.
    """
    require_same_shape(a.shape, b.shape, "images")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def mean_luminance(img: RgbImage) -> float:
    return float(np.mean(luminance(img).data))


def sequence_entropy(video: VideoSequence) -> Tuple[float, float]:
    """
    Mean and standard deviation of the per-frame discrete entropy.
    """
    values = np.array([discrete_entropy(frame) for frame in video])
    return float(values.mean()), float(values.std())


def temporal_variance(video: VideoSequence) -> float:
    """
    Variance of each pixel's luminance over time, averaged over pixels.
    """
    stack = np.stack([luminance(frame).data for frame in video])
    return float(np.mean(np.var(stack, axis=0)))
