import logging
import os
import reprlib
from enum import Enum

import cv2
import numpy as np
from skimage.color import rgb2lab

from typing import List, Optional, Type, TypeVar

from exposure_enhancement.exceptions import (
    DimensionMismatch,
    ImageReadError,
    ImageWriteError,
    OutOfRangeValue,
    UnsupportedFormat,
)


SUPPORTED_EXTENSIONS = (".png", ".ppm")

# BT.601 luma weights
YUV_WEIGHTS = np.array([0.299, 0.587, 0.114])

F = TypeVar("F", bound="ScalarField")


class LuminanceSpace(Enum):
    """
    LuminanceSpace selects how a color image is reduced to a single
    brightness channel.
    """

    YUV_Y = "yuv_y"
    LAB_L = "lab_l"


class RgbImage:
    """
    Three-channel raster of normalized values. Used both for observed
    (underexposed) inputs and for recovered outputs.

    Args:
      data (ndarray): array of shape (height, width, 3), every channel value
        finite and in [0, 1].

    Examples:
      >>> img = RgbImage(np.zeros((2, 3, 3)))
      >>> img.width, img.height
      (3, 2)
    """

    def __init__(self, data: np.ndarray) -> None:
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DimensionMismatch(
                "expected an array of shape (H, W, 3), got {}".format(data.shape)
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch("image must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise OutOfRangeValue("image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise OutOfRangeValue(
                "out-of-range channel value in [{}, {}]".format(data.min(), data.max())
            )
        self.data = data

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def channel(self, index: int) -> "ScalarField":
        return ScalarField(self.data[..., index])

    def __str__(self) -> str:
        return "<RgbImage {}x{}>".format(self.width, self.height)

    def __repr__(self) -> str:
        return "RgbImage({})".format(reprlib.repr(self.data))


class ScalarField:
    """
    Single-channel float raster. Holds illumination maps, lower bounds and
    luminance maps.

    Args:
      data (ndarray): array of shape (height, width) with finite values.
    """

    def __init__(self, data: np.ndarray) -> None:
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatch(
                "expected an array of shape (H, W), got {}".format(data.shape)
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch("field must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise OutOfRangeValue("field contains non-finite values")
        self.data = data

    @classmethod
    def constant(cls: Type[F], width: int, height: int, value: float) -> F:
        """
        Alternative constructor for a field filled with a single value.
        """
        return cls(np.full((height, width), float(value)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def __str__(self) -> str:
        return "<ScalarField {}x{}>".format(self.width, self.height)

    def __repr__(self) -> str:
        return "ScalarField({})".format(reprlib.repr(self.data))


class VideoSequence:
    """
    Ordered frames of equal size. Video is handled as an image sequence;
    `fps` is carried along as metadata only.

    Args:
      frames (list[RgbImage]): at least one frame, all the same size.
      fps (float, optional): frames per second.
    """

    def __init__(self, frames: List[RgbImage], fps: Optional[float] = None) -> None:
        if not frames:
            raise ValueError("a video needs at least one frame")
        shape = frames[0].shape
        for index, frame in enumerate(frames):
            if frame.shape != shape:
                raise DimensionMismatch(
                    "frame {} is {}x{}, expected {}x{}".format(
                        index, frame.width, frame.height, shape[1], shape[0]
                    )
                )
        self.frames = list(frames)
        self.fps = fps

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, index: int) -> RgbImage:
        return self.frames[index]

    def __iter__(self):
        return iter(self.frames)

    @property
    def shape(self) -> tuple:
        return self.frames[0].shape

    def __str__(self) -> str:
        return "<VideoSequence {} frames {}x{}>".format(
            len(self.frames), self.shape[1], self.shape[0]
        )


def require_same_shape(first: tuple, second: tuple, what: str = "rasters") -> None:
    if tuple(first) != tuple(second):
        raise DimensionMismatch(
            "{} differ in size: {} vs {}".format(what, tuple(first), tuple(second))
        )


def _check_extension(path: str) -> str:
    extension = os.path.splitext(path)[1].lower()
    if extension not in SUPPORTED_EXTENSIONS:
        raise UnsupportedFormat("unsupported format: {}".format(path))
    return extension


def quantize(values: np.ndarray) -> np.ndarray:
    """
    Quantize [0, 1] values to 8 bits, rounding half up.
    """
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def load_image(path: str) -> RgbImage:
    """
    Load a PNG (8 or 16 bit) or binary PPM file. Channels are divided by the
    format's maximum value; no color management is applied. Grayscale files
    are replicated to three channels and alpha is dropped.

    Args:
      path (str): location of the image on disk.

    Returns:
      img (RgbImage): normalized image.
    """
    _check_extension(path)
    if not os.path.isfile(path):
        raise ImageReadError("unreadable file: {} does not exist".format(path))

    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None or raw.size == 0:
        raise ImageReadError("unreadable file: {}".format(path))

    if raw.dtype == np.uint8:
        max_value = 255.0
    elif raw.dtype == np.uint16:
        max_value = 65535.0
    else:
        raise UnsupportedFormat("unsupported sample type {} in {}".format(raw.dtype, path))

    if raw.ndim == 2:
        rgb = np.repeat(raw[..., None], 3, axis=2)
    elif raw.shape[2] == 4:
        rgb = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    else:
        rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)

    logging.debug(f"loaded {path} ({rgb.shape[1]}x{rgb.shape[0]}, {raw.dtype})")
    return RgbImage(rgb.astype(np.float64) / max_value)


def save_image(img: RgbImage, path: str) -> None:
    """
    Save an image as 8-bit PNG or PPM, picking the format from the extension.
    Values are rounded half up after scaling by 255.

    Args:
      img (RgbImage): image to save.
      path (str): destination; its parent directory must exist.
    """
    _check_extension(path)
    data = img.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise OutOfRangeValue("out-of-range channel value, cannot save {}".format(path))

    bgr = cv2.cvtColor(quantize(data), cv2.COLOR_RGB2BGR)
    try:
        written = cv2.imwrite(path, bgr)
    except cv2.error as e:
        raise ImageWriteError("could not write {}: {}".format(path, e))
    if not written:
        raise ImageWriteError("could not write {}".format(path))


def luminance(img: RgbImage, space: LuminanceSpace = LuminanceSpace.YUV_Y) -> ScalarField:
    """
    Reduce an image to a brightness channel in [0, 1].

    `YUV_Y` uses the BT.601 weights; `LAB_L` is CIE L* (sRGB input, D65 white)
    divided by 100.

    Examples:
      >>> white = RgbImage(np.ones((1, 1, 3)))
      >>> round(float(luminance(white).data[0, 0]), 6)
      1.0
    """
    space = LuminanceSpace(space)
    if space is LuminanceSpace.YUV_Y:
        values = img.data @ YUV_WEIGHTS
    else:
        values = rgb2lab(img.data, illuminant="D65")[..., 0] / 100.0
    return ScalarField(np.clip(values, 0.0, 1.0))


def dump_scalar_field(field: ScalarField, path: str, colormap: bool = False) -> List[str]:
    """
    Write a field as an 8-bit grayscale PNG and as a raw float raster.

    The raw file starts with the ASCII header "W H\\n" followed by W*H
    little-endian float32 values in row-major order. Both files share the
    stem of `path`: "illum.png" and "illum.raw" for path "illum" or
    "illum.png". With `colormap`, a hot-colormap rendering "illum_hot.png"
    is written as well.

    Args:
      field (ScalarField): values in [0, 1].
      path (str): destination stem.
      colormap (bool): also write the hot-colormap visualization.

    Returns:
      paths (list[str]): files written.
    """
    values = field.data
    if values.min() < 0.0 or values.max() > 1.0:
        raise OutOfRangeValue("field values must be in [0, 1] to be dumped")

    stem = os.path.splitext(path)[0]
    png_path = stem + ".png"
    raw_path = stem + ".raw"
    gray = quantize(values)
    if not cv2.imwrite(png_path, gray):
        raise ImageWriteError("could not write {}".format(png_path))

    try:
        with open(raw_path, "wb") as f:
            f.write("{} {}\n".format(field.width, field.height).encode("ascii"))
            f.write(values.astype("<f4").tobytes())
    except OSError as e:
        raise ImageWriteError("could not write {}: {}".format(raw_path, e))

    written = [png_path, raw_path]
    if colormap:
        hot_path = stem + "_hot.png"
        if not cv2.imwrite(hot_path, cv2.applyColorMap(gray, cv2.COLORMAP_HOT)):
            raise ImageWriteError("could not write {}".format(hot_path))
        written.append(hot_path)
    return written


def read_scalar_field(path: str) -> ScalarField:
    """
    Read a raw float raster written by `dump_scalar_field`.
    """
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        payload = f.read()
    try:
        width, height = int(header[0]), int(header[1])
    except (IndexError, ValueError):
        raise ImageReadError("unreadable file: bad raster header in {}".format(path))
    values = np.frombuffer(payload, dtype="<f4")
    if values.size != width * height:
        raise ImageReadError("unreadable file: truncated raster {}".format(path))
    return ScalarField(values.reshape(height, width).astype(np.float64))
