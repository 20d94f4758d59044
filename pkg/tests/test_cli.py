import os

import numpy as np
import pytest

from exposure_enhancement.cli import (
    build_enhance_parser,
    list_frames,
    main,
    metrics_main,
    resolve_settings,
)
from exposure_enhancement.exceptions import FrameSequenceError
from exposure_enhancement.raster import RgbImage, save_image

from tests.conftest import FILES_DIR


def write_image(img, directory, name):
    path = os.path.join(str(directory), name)
    save_image(img, path)
    return path


def write_frames(frames, directory):
    os.makedirs(str(directory), exist_ok=True)
    for index, frame in enumerate(frames):
        write_image(frame, directory, "frame_{:05d}.png".format(index))
    return str(directory)


def read_report(path):
    with open(path) as f:
        return dict(line.strip().split("=", 1) for line in f if line.strip())


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_metrics_de_of_uniform_image(tmpdir, make_gray, capsys):
    path = write_image(make_gray(np.full((4, 4), 0.5)), tmpdir, "flat.png")

    assert metrics_main(["de", path]) == 0

    assert capsys.readouterr().out.splitlines() == ["DE=0.000", "NIQE: unavailable"]


def test_metrics_de_of_full_gradient(tmpdir, make_gray, capsys):
    levels = np.arange(256, dtype=np.float64).reshape(16, 16) / 255.0
    path = write_image(make_gray(levels), tmpdir, "gradient.png")

    metrics_main(["de", path])

    assert "DE=8.000" in capsys.readouterr().out


def test_metrics_psnr_of_identical_images(tmpdir, dimmed_image, capsys):
    path = write_image(dimmed_image, tmpdir, "same.png")

    assert metrics_main(["psnr", path, path]) == 0

    assert capsys.readouterr().out.strip() == "PSNR=99.000"


def test_metrics_video(tmpdir, make_gray, capsys):
    directory = write_frames([make_gray(np.full((4, 4), 0.4))] * 3, tmpdir.join("frames"))

    assert metrics_main(["video", directory]) == 0

    out = capsys.readouterr().out.splitlines()
    assert out == ["DE_mean=0.000", "DE_std=0.000", "TV=0.000000"]


def test_metrics_missing_image(tmpdir, capsys):
    assert metrics_main(["de", os.path.join(str(tmpdir), "missing.png")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_enhance_photo_with_report(tmpdir, dimmed_image, capsys):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    output = os.path.join(str(tmpdir), "bright.png")
    report_path = os.path.join(str(tmpdir), "report.txt")

    assert main(["photo", source, output, "--report", report_path]) == 0

    assert os.path.exists(output)
    assert "[*] Enhanced image saved in {}".format(output) in capsys.readouterr().out
    report = read_report(report_path)
    assert 1 <= int(report["outer_iterations"]) <= 20
    assert int(report["clamped_pixels"]) == 0
    assert float(report["de_in"]) >= 0.0
    assert "wall_ms" in report


def test_enhance_photo_rejects_bad_gamma(tmpdir, dimmed_image, capsys):
    source = write_image(dimmed_image, tmpdir, "dark.png")

    code = main(["photo", source, os.path.join(str(tmpdir), "out.png"), "--gamma", "1.5"])

    assert code == 2
    assert "gamma must be in (0,1]" in capsys.readouterr().err


def test_enhance_photo_missing_input(tmpdir):
    missing = os.path.join(str(tmpdir), "missing.png")
    assert main(["photo", missing, os.path.join(str(tmpdir), "out.png")]) == 1


def test_naive_and_fast_agree_on_small_images(tmpdir, dimmed_image):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    fast = os.path.join(str(tmpdir), "fast.png")
    naive = os.path.join(str(tmpdir), "naive.png")

    main(["photo", source, fast])
    main(["photo", source, naive, "--naive"])

    assert read_bytes(fast) == read_bytes(naive)


def test_enhance_photo_is_deterministic(tmpdir, dimmed_image):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    first = os.path.join(str(tmpdir), "first.png")
    second = os.path.join(str(tmpdir), "second.png")

    main(["photo", source, first])
    main(["photo", source, second])

    assert read_bytes(first) == read_bytes(second)


def test_enhance_photo_dumps_illumination(tmpdir, dimmed_image):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    stem = os.path.join(str(tmpdir), "illum")

    main(["photo", source, os.path.join(str(tmpdir), "out.png"), "--dump-illum", stem, "--colormap"])

    for suffix in (".png", ".raw", "_hot.png"):
        assert os.path.exists(stem + suffix)


def test_enhance_photo_variants(tmpdir, dimmed_image):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    for flag in ("--per-channel", "--overexposure"):
        output = os.path.join(str(tmpdir), "out{}.png".format(flag))
        assert main(["photo", source, output, flag]) == 0
        assert os.path.exists(output)


def test_variants_are_mutually_exclusive(tmpdir):
    with pytest.raises(SystemExit):
        build_enhance_parser().parse_args(["photo", "a.png", "b.png", "--per-channel", "--overexposure"])


def test_flags_take_precedence_over_config():
    args = build_enhance_parser().parse_args(
        [
            "photo",
            "a.png",
            "b.png",
            "--config",
            os.path.join(FILES_DIR, "settings.yaml"),
            "--lambda",
            "0.3",
        ]
    )

    settings = resolve_settings(args)

    assert settings.solver.lam == 0.3
    assert settings.solver.gamma.gamma == 0.7
    assert settings.jbu.max_dim == 200


def test_unknown_config_key_is_a_usage_error(tmpdir, dimmed_image):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    config = os.path.join(FILES_DIR, "unknown_key.yaml")
    assert main(["photo", source, os.path.join(str(tmpdir), "out.png"), "--config", config]) == 2


def test_keyframes_only_on_static_video(tmpdir, make_gray, capsys):
    directory = write_frames([make_gray(np.full((8, 8), 0.3))] * 5, tmpdir.join("frames"))

    assert main(["video", directory, str(tmpdir.join("out")), "--keyframes-only"]) == 0

    assert capsys.readouterr().out.strip() == "0"


def test_enhance_video_writes_every_frame(tmpdir, make_dimmed):
    frames = [make_dimmed(12, 12, seed=9)] * 3
    directory = write_frames(frames, tmpdir.join("frames"))
    output = str(tmpdir.join("out"))

    assert main(["video", directory, output, "--denoise", "0"]) == 0

    assert sorted(os.listdir(output)) == sorted(os.listdir(directory))


def test_enhance_video_missing_directory(tmpdir, capsys):
    code = main(["video", str(tmpdir.join("nothing")), str(tmpdir.join("out"))])
    assert code == 1
    assert "no such frame directory" in capsys.readouterr().err


def test_misnumbered_frames_are_rejected(tmpdir, make_gray):
    directory = str(tmpdir.join("frames"))
    os.makedirs(directory)
    frame = make_gray(np.full((4, 4), 0.3))
    for number in (1, 2, 4):
        write_image(frame, directory, "frame_{:05d}.png".format(number))

    with pytest.raises(FrameSequenceError):
        list_frames(directory)
    assert main(["video", directory, str(tmpdir.join("out"))]) == 1


def test_list_frames_with_custom_pattern(tmpdir, make_gray):
    frame = make_gray(np.full((2, 2), 0.3))
    for number in (3, 4, 5):
        write_image(frame, tmpdir, "shot-{}.ppm".format(number))
    assert list_frames(str(tmpdir), "shot-%d.ppm") == [3, 4, 5]


@pytest.mark.parametrize("flag", ["--per-channel", "--overexposure"])
def test_dump_illum_needs_the_joint_solve(tmpdir, dimmed_image, capsys, flag):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    output = os.path.join(str(tmpdir), "out.png")
    stem = os.path.join(str(tmpdir), "illum")

    assert main(["photo", source, output, flag, "--dump-illum", stem]) == 2

    assert "--dump-illum" in capsys.readouterr().err
    assert not os.path.exists(output)
    assert not os.path.exists(stem + ".png")


def test_colormap_needs_dump_illum(tmpdir, dimmed_image):
    source = write_image(dimmed_image, tmpdir, "dark.png")
    assert main(["photo", source, os.path.join(str(tmpdir), "out.png"), "--colormap"]) == 2
