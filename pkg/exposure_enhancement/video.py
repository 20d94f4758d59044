import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from typing import Dict, List, Optional, Tuple

from exposure_enhancement.exceptions import DimensionMismatch, InvalidParameter
from exposure_enhancement.flow.base import FlowEstimator, FlowField, warp
from exposure_enhancement.flow.horn_schunck import HornSchunck
from exposure_enhancement.illumination import GammaParams, box_lower_bound, recover
from exposure_enhancement.multiscale import JbuParams, estimate_illumination_fast
from exposure_enhancement.raster import (
    LuminanceSpace,
    RgbImage,
    ScalarField,
    VideoSequence,
    luminance,
    require_same_shape,
)
from exposure_enhancement.rtv import gaussian_convolve
from exposure_enhancement.solver import SolveReport, SolverConfig, project_box


@dataclass(frozen=True)
class PropagationConfig:
    """
    Settings of keyframe extraction and illumination propagation.

    Args:
      window_n (int): side of the square search window around the
        motion-compensated pixel.
      parzen_d (float): width of the luminance kernel, on the 8-bit scale.
      bins (int): number of illumination histogram bins.
      keyframe_ell (float): Lab lightness change (in [0, 1]) that counts a
        pixel as changed.
      keyframe_ratio (float): a frame becomes a keyframe when more than this
        fraction of pixels changed.
      keyframe_blur_sigma (float): Gaussian blur applied to the lightness
        before comparing.
      min_distance_clamp (float): lower clamp of the prior's pixel distance.
    """

    window_n: int = 30
    parzen_d: float = 5.0
    bins: int = 16
    keyframe_ell: float = 0.1
    keyframe_ratio: float = 0.3
    keyframe_blur_sigma: float = 2.0
    min_distance_clamp: float = 1.0

    def __post_init__(self) -> None:
        if self.window_n < 1 or self.bins < 1:
            raise InvalidParameter("window_n and bins must be at least 1")
        if self.parzen_d <= 0 or self.keyframe_blur_sigma <= 0:
            raise InvalidParameter("parzen_d and keyframe_blur_sigma must be positive")
        if self.keyframe_ell <= 0 or self.min_distance_clamp <= 0:
            raise InvalidParameter("keyframe_ell and min_distance_clamp must be positive")
        if not 0.0 < self.keyframe_ratio < 1.0:
            raise InvalidParameter("keyframe_ratio must be in (0,1)")


class KeyframeIndex:
    """
    Strictly increasing frame indices whose illumination is solved directly.
    The first frame is always a keyframe.
    """

    def __init__(self, indices: List[int]) -> None:
        if not indices or indices[0] != 0:
            raise ValueError("the first frame must be a keyframe")
        if any(later <= earlier for earlier, later in zip(indices, indices[1:])):
            raise ValueError("keyframe indices must be strictly increasing")
        self.indices = list(indices)

    def __contains__(self, index: int) -> bool:
        return index in self.indices

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        if isinstance(other, KeyframeIndex):
            return self.indices == other.indices
        return self.indices == list(other)

    def __str__(self) -> str:
        return " ".join(str(index) for index in self.indices)

    def __repr__(self) -> str:
        return "KeyframeIndex({})".format(self.indices)


class IlluminationHistogram:
    """
    Uniform histogram of an illumination map over [0, 1], the last bin
    closed at 1.0. Keeps the bin of every pixel so that bin membership can
    be queried per window.

    Args:
      S (ScalarField): illumination in [0, 1].
      bins (int): number of bins.
    """

    def __init__(self, S: ScalarField, bins: int = 16) -> None:
        self.bins = bins
        index = np.floor(np.clip(S.data, 0.0, 1.0) * bins).astype(np.int64)
        self.bin_index = np.minimum(index, bins - 1)
        self.counts = np.bincount(self.bin_index.ravel(), minlength=bins)

    def members(self, bin_i: int) -> np.ndarray:
        """
        Flat (row-major) indices of the pixels in bin `bin_i`.
        """
        return np.flatnonzero(self.bin_index.ravel() == bin_i)

    def __str__(self) -> str:
        return "<IlluminationHistogram {} bins>".format(self.bins)


def illumination_histogram(S: ScalarField, bins: int = 16) -> IlluminationHistogram:
    """
    Examples:
      >>> illumination_histogram(ScalarField.constant(2, 2, 0.5)).counts[8]
      4
    """
    return IlluminationHistogram(S, bins)


def _keyframe_lightness(frame: RgbImage, config: PropagationConfig) -> np.ndarray:
    lightness = luminance(frame, LuminanceSpace.LAB_L)
    return gaussian_convolve(lightness, config.keyframe_blur_sigma).data


def extract_keyframes(video: VideoSequence, config: PropagationConfig = PropagationConfig()) -> KeyframeIndex:
    """
    Scan the video forward and start a new keyframe whenever more than
    `keyframe_ratio` of the pixels differ from the last keyframe by at least
    `keyframe_ell` in blurred Lab lightness.
    """
    indices = [0]
    reference = _keyframe_lightness(video[0], config)
    for t in range(1, len(video)):
        lightness = _keyframe_lightness(video[t], config)
        changed = np.mean(np.abs(lightness - reference) >= config.keyframe_ell)
        if changed > config.keyframe_ratio:
            indices.append(t)
            reference = lightness
    logging.info(f"keyframes: {indices}")
    return KeyframeIndex(indices)


def _window_bounds(center: int, length: int, window_n: int) -> Tuple[int, int]:
    before = window_n // 2
    after = window_n - 1 - before
    return max(center - before, 0), min(center + after, length - 1)


def _displaced(p: Tuple[int, int], flow: FlowField, shape: tuple) -> Tuple[int, int]:
    x, y = p
    height, width = shape
    px = min(max(int(math.floor(x + flow.vx[y, x] + 0.5)), 0), width - 1)
    py = min(max(int(math.floor(y + flow.vy[y, x] + 0.5)), 0), height - 1)
    return px, py


def likelihood(
    p: Tuple[int, int],
    bin_i: int,
    L_cur: ScalarField,
    L_prev: ScalarField,
    hist: IlluminationHistogram,
    flow: FlowField,
    config: PropagationConfig = PropagationConfig(),
) -> float:
    """
    Parzen estimate of how well pixel p = (x, y) of the current frame fits
    illumination bin `bin_i` of the previous frame: the luminance kernel
    summed over the bin's members inside the window around the
    motion-compensated position, divided by the bin size.
    """
    if hist.counts[bin_i] == 0:
        return 0.0
    x, y = p
    px, py = _displaced(p, flow, L_cur.shape)
    y0, y1 = _window_bounds(py, L_cur.height, config.window_n)
    x0, x1 = _window_bounds(px, L_cur.width, config.window_n)
    scale = 2.0 * config.parzen_d * config.parzen_d
    total = 0.0
    for qy in range(y0, y1 + 1):
        for qx in range(x0, x1 + 1):
            if hist.bin_index[qy, qx] == bin_i:
                delta = 255.0 * (L_prev.data[qy, qx] - L_cur.data[y, x])
                total += math.exp(-(delta * delta) / scale)
    return total / hist.counts[bin_i]


def prior(
    p_prime: Tuple[int, int],
    bin_i: int,
    hist: IlluminationHistogram,
    config: PropagationConfig = PropagationConfig(),
) -> float:
    """
    Smoothness prior of bin `bin_i` at the motion-compensated pixel
    p_prime = (x, y): the inverse square root of the distance to the
    nearest bin member in the window, the distance clamped below by
    `min_distance_clamp`. Zero when no member is in the window.
    """
    px, py = p_prime
    height, width = hist.bin_index.shape
    y0, y1 = _window_bounds(py, height, config.window_n)
    x0, x1 = _window_bounds(px, width, config.window_n)
    nearest = math.inf
    for qy in range(y0, y1 + 1):
        for qx in range(x0, x1 + 1):
            if hist.bin_index[qy, qx] == bin_i:
                nearest = min(nearest, math.sqrt((qx - px) ** 2 + (qy - py) ** 2))
    if nearest == math.inf:
        return 0.0
    return 1.0 / math.sqrt(max(nearest, config.min_distance_clamp))


@njit(parallel=True, cache=True)
def _map_kernel(
    l_cur, l_prev, bin_index, counts, s_prev, fallback, flow_x, flow_y,
    window_n, parzen_d, min_distance,
):
    height, width = l_cur.shape
    bins = counts.shape[0]
    values = np.empty((height, width))
    winners = np.empty((height, width), dtype=np.int64)
    before = window_n // 2
    after = window_n - 1 - before
    scale = 2.0 * parzen_d * parzen_d
    for y in prange(height):
        kernel_sum = np.zeros(bins)
        nearest = np.zeros(bins)
        value_sum = np.zeros(bins)
        members = np.zeros(bins, dtype=np.int64)
        for x in range(width):
            kernel_sum[:] = 0.0
            nearest[:] = math.inf
            value_sum[:] = 0.0
            members[:] = 0
            px = min(max(int(math.floor(x + flow_x[y, x] + 0.5)), 0), width - 1)
            py = min(max(int(math.floor(y + flow_y[y, x] + 0.5)), 0), height - 1)
            for qy in range(max(py - before, 0), min(py + after, height - 1) + 1):
                for qx in range(max(px - before, 0), min(px + after, width - 1) + 1):
                    i = bin_index[qy, qx]
                    delta = 255.0 * (l_prev[qy, qx] - l_cur[y, x])
                    kernel_sum[i] += math.exp(-(delta * delta) / scale)
                    distance = math.sqrt((qx - px) ** 2 + (qy - py) ** 2)
                    if distance < nearest[i]:
                        nearest[i] = distance
                    value_sum[i] += s_prev[qy, qx]
                    members[i] += 1

            best = -1
            best_posterior = 0.0
            for i in range(bins):
                if members[i] == 0:
                    continue
                posterior = (kernel_sum[i] / counts[i]) * (
                    1.0 / math.sqrt(max(nearest[i], min_distance))
                )
                # strict comparison keeps the lower bin on ties
                if posterior > best_posterior:
                    best_posterior = posterior
                    best = i
            winners[y, x] = best
            if best < 0:
                values[y, x] = fallback[y, x]
            else:
                values[y, x] = value_sum[best] / members[best]
    return values, winners


def map_assignment(
    S_prev: ScalarField,
    L_prev: ScalarField,
    L_cur: ScalarField,
    flow: FlowField,
    config: PropagationConfig = PropagationConfig(),
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Maximum a posteriori bin of every pixel of the current frame.

    Returns:
      A tuple of (propagated values before clamping, winning bin per pixel).
      Pixels whose posterior vanishes for every bin get bin -1 and the
      previous illumination warped by the flow.
    """
    require_same_shape(S_prev.shape, L_cur.shape, "illumination and frame")
    require_same_shape(L_prev.shape, L_cur.shape, "frames")
    require_same_shape(flow.shape, L_cur.shape, "flow and frame")
    hist = illumination_histogram(S_prev, config.bins)
    fallback = warp(S_prev, flow)
    return _map_kernel(
        L_cur.data,
        L_prev.data,
        hist.bin_index,
        hist.counts,
        S_prev.data,
        fallback.data,
        np.ascontiguousarray(flow.vx),
        np.ascontiguousarray(flow.vy),
        config.window_n,
        float(config.parzen_d),
        float(config.min_distance_clamp),
    )


def propagate_illumination(
    S_prev: ScalarField,
    f_prev: RgbImage,
    f_cur: RgbImage,
    config: PropagationConfig = PropagationConfig(),
    flow: Optional[FlowField] = None,
    estimator: Optional[FlowEstimator] = None,
    gamma: GammaParams = GammaParams(),
    color_constraint: bool = True,
) -> ScalarField:
    """
    Carry the previous frame's illumination over to the current frame.

    Every pixel takes the mean previous illumination of the winning bin's
    members inside its search window, and the result is clamped to the
    current frame's box [S_min, 1].

    Args:
      S_prev (ScalarField): illumination of the previous frame.
      f_prev (RgbImage): previous frame.
      f_cur (RgbImage): current frame.
      config (PropagationConfig): propagation settings.
      flow (FlowField, optional): motion from `f_cur` to `f_prev`; estimated
        with `estimator` when omitted.
      estimator (FlowEstimator, optional): defaults to `HornSchunck`.
      gamma (GammaParams): gamma settings used for the box.
      color_constraint (bool): see `SolverConfig`.

    Returns:
      S (ScalarField): illumination of the current frame.
    """
    L_prev = luminance(f_prev)
    L_cur = luminance(f_cur)
    if flow is None:
        flow = (estimator or HornSchunck()).estimate(L_cur, L_prev)
    values, _ = map_assignment(S_prev, L_prev, L_cur, flow, config)
    S_min = box_lower_bound(f_cur, gamma, color_constraint)
    return project_box(ScalarField(values), S_min)


def temporal_denoise(
    video: VideoSequence, flows: List[FlowField], strength: float = 0.5
) -> VideoSequence:
    """
    Motion compensated exponential blend: every output frame mixes the input
    frame with the previous output frame warped onto it.

    Args:
      video (VideoSequence): frames to smooth.
      flows (list[FlowField]): `flows[t - 1]` maps frame t onto frame t-1.
      strength (float): weight of the previous output, in [0, 1].
    """
    if not 0.0 <= strength <= 1.0:
        raise InvalidParameter("denoise strength must be in [0,1]")
    if len(flows) != len(video) - 1:
        raise DimensionMismatch(
            "expected {} flows for {} frames, got {}".format(len(video) - 1, len(video), len(flows))
        )
    if strength == 0.0:
        return video

    output = [video[0]]
    for t in range(1, len(video)):
        previous = output[-1]
        warped = np.stack(
            [warp(previous.channel(c), flows[t - 1]).data for c in range(3)], axis=2
        )
        blended = (1.0 - strength) * video[t].data + strength * warped
        output.append(RgbImage(np.clip(blended, 0.0, 1.0)))
    return VideoSequence(output, video.fps)


def estimate_flows(video: VideoSequence, estimator: Optional[FlowEstimator] = None) -> List[FlowField]:
    """
    Flow from every frame to its predecessor.
    """
    estimator = estimator or HornSchunck()
    lightness = [luminance(frame) for frame in video]
    return [estimator.estimate(lightness[t], lightness[t - 1]) for t in range(1, len(video))]


def estimate_video_illumination(
    video: VideoSequence,
    solver: SolverConfig = SolverConfig(),
    jbu: JbuParams = JbuParams(),
    prop: PropagationConfig = PropagationConfig(),
    estimator: Optional[FlowEstimator] = None,
    flows: Optional[List[FlowField]] = None,
) -> Tuple[List[ScalarField], KeyframeIndex, Dict[int, SolveReport]]:
    """
    Illumination of every frame: keyframes are solved through the fast
    path, all other frames are propagated forward from their predecessor.

    Returns:
      A tuple of (illumination per frame, keyframes, solve report per keyframe)
    """
    keyframes = extract_keyframes(video, prop)
    if flows is None:
        flows = estimate_flows(video, estimator)

    illuminations: List[ScalarField] = []
    reports: Dict[int, SolveReport] = {}
    for t, frame in enumerate(video):
        if t in keyframes:
            S, reports[t] = estimate_illumination_fast(frame, solver, jbu)
        else:
            S = propagate_illumination(
                illuminations[-1],
                video[t - 1],
                frame,
                prop,
                flow=flows[t - 1],
                gamma=solver.gamma,
                color_constraint=solver.color_constraint,
            )
            logging.debug(f"frame {t}: illumination propagated")
        illuminations.append(S)
    return illuminations, keyframes, reports


def enhance_video(
    video: VideoSequence,
    solver: SolverConfig = SolverConfig(),
    jbu: JbuParams = JbuParams(),
    prop: PropagationConfig = PropagationConfig(),
    denoise_strength: float = 0.5,
    estimator: Optional[FlowEstimator] = None,
) -> VideoSequence:
    """
    Enhance a video: solve keyframes, propagate illumination to the frames
    in between, recover each frame and smooth the result over time.

    Args:
      video (VideoSequence): input frames.
      solver (SolverConfig): solver settings.
      jbu (JbuParams): fast path settings.
      prop (PropagationConfig): keyframe and propagation settings.
      denoise_strength (float): temporal blend weight, 0 disables it.
      estimator (FlowEstimator, optional): defaults to `HornSchunck`.

    Returns:
      video (VideoSequence): enhanced frames.
    """
    enhanced, _, _ = enhance_video_detailed(video, solver, jbu, prop, denoise_strength, estimator)
    return enhanced


def enhance_video_detailed(
    video: VideoSequence,
    solver: SolverConfig = SolverConfig(),
    jbu: JbuParams = JbuParams(),
    prop: PropagationConfig = PropagationConfig(),
    denoise_strength: float = 0.5,
    estimator: Optional[FlowEstimator] = None,
) -> Tuple[VideoSequence, List[ScalarField], KeyframeIndex]:
    """
    Same as `enhance_video`, also returning the illumination of every frame
    and the keyframes.
    """
    flows = estimate_flows(video, estimator)
    illuminations, keyframes, _ = estimate_video_illumination(
        video, solver, jbu, prop, flows=flows
    )
    enhanced = [recover(frame, S, solver.gamma)[0] for frame, S in zip(video, illuminations)]
    denoised = temporal_denoise(VideoSequence(enhanced, video.fps), flows, denoise_strength)
    return denoised, illuminations, keyframes
