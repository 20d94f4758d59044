import argparse
import logging
import os
import re
import sys
import time

from typing import Any, Callable, Dict, List, Optional, Tuple

from exposure_enhancement.config import Settings, build_settings, load, save_report
from exposure_enhancement.exceptions import (
    ConfigError,
    ConvergenceError,
    DimensionMismatch,
    FrameSequenceError,
    ImageReadError,
    ImageWriteError,
    InvalidParameter,
    InvalidWeights,
    OutOfRangeValue,
    UnsupportedFormat,
)
from exposure_enhancement.metrics import (
    discrete_entropy,
    psnr,
    sequence_entropy,
    temporal_variance,
)
from exposure_enhancement.photo import (
    EnhanceMode,
    correct_overexposure,
    enhance_per_channel,
    enhance_photo,
)
from exposure_enhancement.raster import (
    VideoSequence,
    dump_scalar_field,
    load_image,
    save_image,
)
from exposure_enhancement.video import enhance_video_detailed, extract_keyframes


DEFAULT_FRAME_PATTERN = "frame_%05d.png"

# Usage problems, reported with exit code 2
USAGE_ERRORS = (InvalidParameter, ConfigError)

# Runtime problems, reported with exit code 1
RUNTIME_ERRORS = (
    ImageReadError,
    ImageWriteError,
    UnsupportedFormat,
    OutOfRangeValue,
    DimensionMismatch,
    InvalidWeights,
    ConvergenceError,
    FrameSequenceError,
    OSError,
)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debugging")
    parser.add_argument("--config", help="YAML or key=value file with settings")


def _add_solver_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="lam", type=float, help="smoothness weight (default 0.8)")
    parser.add_argument("--gamma", type=float, help="gamma in (0,1] (default 0.6)")
    parser.add_argument("--tau", type=float, help="edge threshold on luminance (default 1e-5)")
    parser.add_argument("--max-dim", type=int, help="larger dimension of the fast solve (default 400)")
    parser.add_argument("--linear-solver", choices=["cg", "direct"], help="linear solver (default cg)")
    parser.add_argument("--naive", action="store_true", help="solve at full resolution")
    parser.add_argument("--no-color", action="store_true", help="drop the per-pixel gamut bound")
    parser.add_argument("--no-detail", action="store_true", help="skip the detail projection")
    parser.add_argument("--no-exposure", action="store_true", help="drop the smoothness term")


def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {
        "lambda": args.lam,
        "gamma": args.gamma,
        "tau": args.tau,
        "max_dim": args.max_dim,
        "linear_solver": args.linear_solver,
        "color_constraint": False if args.no_color else None,
        "detail_constraint": False if args.no_detail else None,
        "exposure_constraint": False if args.no_exposure else None,
    }
    for key in ("ell", "kf_ratio", "window", "parzen_d", "denoise"):
        overrides[key] = getattr(args, key, None)
    return overrides


def resolve_settings(args: argparse.Namespace) -> Settings:
    """
    Defaults, then the config file, then explicit flags.
    """
    settings = Settings()
    if args.config:
        settings = build_settings(load(args.config), settings)
    return build_settings(_flag_overrides(args), settings)


def cmd_enhance_photo(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    if args.dump_illum and (args.per_channel or args.overexposure):
        raise InvalidParameter("--dump-illum needs the joint illumination, drop --per-channel/--overexposure")
    if args.colormap and not args.dump_illum:
        raise InvalidParameter("--colormap needs --dump-illum")
    mode = EnhanceMode.NAIVE if args.naive else EnhanceMode.FAST
    img = load_image(args.input)

    start = time.perf_counter()
    report: Dict[str, Any] = {}
    if args.overexposure:
        enhanced = correct_overexposure(img, settings.solver, settings.jbu, mode)
    elif args.per_channel:
        enhanced = enhance_per_channel(img, settings.solver, settings.jbu, mode)
    else:
        enhanced, illumination, solve_report = enhance_photo(img, settings.solver, settings.jbu, mode)
        report.update(solve_report.as_dict())
        if args.dump_illum:
            written = dump_scalar_field(illumination, args.dump_illum, colormap=args.colormap)
            print("[*] Illumination saved in {}".format(", ".join(written)))
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    save_image(enhanced, args.output)
    print("[*] Enhanced image saved in {}".format(args.output))

    if args.report:
        report.update(
            {
                "de_in": round(discrete_entropy(img), 6),
                "de_out": round(discrete_entropy(enhanced), 6),
                "wall_ms": round(elapsed_ms, 3),
            }
        )
        save_report(report, args.report)
        print("[*] Report saved in {}".format(args.report))
    return 0


def _frame_regex(pattern: str) -> "re.Pattern[str]":
    match = re.fullmatch(r"(.*)%(0?\d*)d(.*)", pattern)
    if not match:
        raise InvalidParameter("frame pattern needs a single %d field: {}".format(pattern))
    prefix, _, suffix = match.groups()
    return re.compile(re.escape(prefix) + r"(\d+)" + re.escape(suffix))


def list_frames(directory: str, pattern: str = DEFAULT_FRAME_PATTERN) -> List[int]:
    """
    Frame numbers of a directory of numbered frames. Numbers must be
    contiguous.
    """
    if not os.path.isdir(directory):
        raise FrameSequenceError("no such frame directory: {}".format(directory))
    regex = _frame_regex(pattern)
    numbers = []
    for name in os.listdir(directory):
        match = regex.fullmatch(name)
        if match:
            numbers.append(int(match.group(1)))
    numbers.sort()
    if not numbers:
        raise FrameSequenceError("no frames matching {} in {}".format(pattern, directory))
    expected = list(range(numbers[0], numbers[0] + len(numbers)))
    if numbers != expected:
        missing = sorted(set(expected) - set(numbers))
        raise FrameSequenceError(
            "misnumbered frames in {}: missing {}".format(directory, missing[:5])
        )
    return numbers


def load_frames(directory: str, pattern: str = DEFAULT_FRAME_PATTERN) -> Tuple[VideoSequence, List[int]]:
    numbers = list_frames(directory, pattern)
    frames = [load_image(os.path.join(directory, pattern % number)) for number in numbers]
    return VideoSequence(frames), numbers


def cmd_enhance_video(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    video, numbers = load_frames(args.input, args.pattern)
    if args.keyframes_only:
        print(extract_keyframes(video, settings.propagation))
        return 0

    jbu = settings.jbu
    if args.naive:
        jbu = build_settings({"max_dim": max(video.shape)}, settings).jbu
    enhanced, illuminations, keyframes = enhance_video_detailed(
        video, settings.solver, jbu, settings.propagation, settings.denoise
    )

    os.makedirs(args.output, exist_ok=True)
    for number, frame in zip(numbers, enhanced):
        save_image(frame, os.path.join(args.output, args.pattern % number))
    print("[*] {} enhanced frames saved in {} (keyframes: {})".format(len(enhanced), args.output, keyframes))

    if args.dump_illum:
        os.makedirs(args.dump_illum, exist_ok=True)
        for number, S in zip(numbers, illuminations):
            dump_scalar_field(S, os.path.join(args.dump_illum, "illum_{:05d}".format(number)))
        print("[*] Illumination saved in {}".format(args.dump_illum))
    return 0


def build_enhance_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enhance", description="Enhance underexposed photos and videos.")
    commands = parser.add_subparsers(dest="command", required=True)

    photo = commands.add_parser("photo", help="enhance a single image")
    photo.add_argument("input", help="PNG or PPM image")
    photo.add_argument("output", help="PNG or PPM destination")
    _add_common_arguments(photo)
    _add_solver_arguments(photo)
    variant = photo.add_mutually_exclusive_group()
    variant.add_argument("--per-channel", action="store_true", help="solve each RGB channel separately")
    variant.add_argument("--overexposure", action="store_true", help="correct an overexposed image")
    photo.add_argument("--dump-illum", help="write the illumination as <stem>.png and <stem>.raw")
    photo.add_argument("--colormap", action="store_true", help="also write <stem>_hot.png")
    photo.add_argument("--report", help="write a key=value report")
    photo.set_defaults(func=cmd_enhance_photo)

    video = commands.add_parser("video", help="enhance a directory of numbered frames")
    video.add_argument("input", help="directory of numbered frames")
    video.add_argument("output", help="directory for the enhanced frames")
    _add_common_arguments(video)
    _add_solver_arguments(video)
    video.add_argument("--ell", type=float, help="keyframe lightness threshold (default 0.1)")
    video.add_argument("--kf-ratio", type=float, help="keyframe changed-pixel ratio (default 0.3)")
    video.add_argument("--window", type=int, help="propagation window side (default 30)")
    video.add_argument("--parzen-d", type=float, help="propagation kernel width (default 5)")
    video.add_argument("--denoise", type=float, help="temporal denoise strength (default 0.5)")
    video.add_argument("--pattern", default=DEFAULT_FRAME_PATTERN, help="printf-style frame name")
    video.add_argument("--keyframes-only", action="store_true", help="print keyframe indices and exit")
    video.add_argument("--dump-illum", help="directory for per-frame illumination dumps")
    video.set_defaults(func=cmd_enhance_video)
    return parser


def cmd_metrics(args: argparse.Namespace) -> int:
    if args.command == "de":
        print("DE={:.3f}".format(discrete_entropy(load_image(args.image))))
        print("NIQE: unavailable")
    elif args.command == "psnr":
        print("PSNR={:.3f}".format(psnr(load_image(args.first), load_image(args.second))))
    else:
        video, _ = load_frames(args.directory, args.pattern)
        mean, std = sequence_entropy(video)
        print("DE_mean={:.3f}".format(mean))
        print("DE_std={:.3f}".format(std))
        print("TV={:.6f}".format(temporal_variance(video)))
    return 0


def build_metrics_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metrics", description="Image and video quality metrics.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    commands = parser.add_subparsers(dest="command", required=True)

    de = commands.add_parser("de", help="discrete entropy of an image")
    de.add_argument("image")
    psnr_parser = commands.add_parser("psnr", help="PSNR between two images")
    psnr_parser.add_argument("first")
    psnr_parser.add_argument("second")
    video = commands.add_parser("video", help="entropy and temporal variance of frames")
    video.add_argument("directory")
    video.add_argument("--pattern", default=DEFAULT_FRAME_PATTERN)
    parser.set_defaults(func=cmd_metrics)
    return parser


def run(command: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    """
    Run a command, turning library errors into exit codes with a one-line
    diagnostic on standard error.
    """
    try:
        return command(args)
    except USAGE_ERRORS as e:
        print("error: {}".format(e), file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as e:
        print("error: {}".format(e), file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_enhance_parser().parse_args(argv)
    _configure_logging(args.verbose)
    return run(args.func, args)


def metrics_main(argv: Optional[List[str]] = None) -> int:
    args = build_metrics_parser().parse_args(argv)
    _configure_logging(args.verbose)
    return run(args.func, args)
