#!/usr/bin/env python3
"""
Test Command Line
Runs the hires-edit commands in-process on the closed-form gray-levels world
"""

import sys
import os
import json
import time
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import pytest
import torch
from PIL import Image

from artifacts.images import load_image
from artifacts.manifest import read_manifest
from artifacts.plotting import read_sweep_report
from engine.schema import GuidanceMode
from main import main

GRAY = "analytic:gray-levels"


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    lines = [line for line in captured.out.splitlines() if line.startswith("{")]
    return code, json.loads(lines[-1]) if lines else None, captured.err


def _error(stderr):
    return json.loads([line for line in stderr.splitlines() if line.startswith("{")][-1])


@pytest.fixture
def dark_image(tmp_path, capsys):
    out_dir = str(tmp_path / "demo")
    code, result, _ = _run(capsys, "demo", "--world", "gray-levels", "--height", "64", "--width", "64",
                           "--seed", "0", "--out-dir", out_dir, "--quiet")
    assert code == 0
    assert len(result["outputs"]) == 2
    return os.path.join(out_dir, "gray-levels_dark_0.png")


@pytest.fixture
def inverted(tmp_path, capsys, dark_image):
    out = str(tmp_path / "inv.ltsr")
    code, result, _ = _run(capsys, "invert", "--input", dark_image, "--out", out, "--backend", GRAY,
                           "--cache-eps", "--quiet")
    assert code == 0
    assert result["latent_shape"] == [64, 64, 1]
    return out


def test_demo_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = _run(capsys, "demo", "--height", "32", "--width", "32", "--seed", "5",
                          "--out-dir", str(tmp_path / name), "--quiet")
        assert code == 0
    for file in ("textures_stripes_0.png", "textures_checkers_0.png"):
        a = (tmp_path / "a" / file).read_bytes()
        assert a == (tmp_path / "b" / file).read_bytes()
        with Image.open(tmp_path / "a" / file) as img:
            assert img.mode == "RGB" and img.size == (32, 32)
    assert read_manifest(str(tmp_path / "a" / "manifest.json")).command == "demo"


def test_missing_input_is_a_usage_error(tmp_path, capsys):
    code, _, err = _run(capsys, "invert", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path / "x.ltsr"),
                        "--backend", GRAY, "--quiet")
    assert code == 2
    assert _error(err)["error"] == "input-not-found"
    assert _error(err)["success"] is False


def test_bad_arguments_exit_with_usage_code(capsys):
    assert main(["invert"]) == 2
    assert main(["no-such-command"]) == 2
    capsys.readouterr()


def test_invert_writes_manifest(inverted):
    manifest = read_manifest(f"{inverted}.manifest.json")
    assert manifest.command == "invert"
    assert manifest.schedule.num_sample_steps == 50
    assert (manifest.plan.rows, manifest.plan.cols) == (2, 2)
    assert manifest.backends["estimator"]["estimator"] == GRAY


def test_same_seed_gives_identical_containers(tmp_path, capsys, dark_image, inverted):
    again = str(tmp_path / "again.ltsr")
    code, _, _ = _run(capsys, "invert", "--input", dark_image, "--out", again, "--backend", GRAY,
                      "--cache-eps", "--quiet")
    assert code == 0
    with open(inverted, "rb") as a, open(again, "rb") as b:
        assert a.read() == b.read()


def test_edit_and_plot(tmp_path, capsys, inverted):
    out = str(tmp_path / "edit.png")
    code, result, _ = _run(capsys, "edit", "--inverted", inverted, "--out", out, "--class", "1", "--record", "--quiet")
    assert code == 0
    assert result["size"] == [64, 64]
    # 2x2 tiles at T=50 switch at tau=10
    assert sum(result["branch_counts"].values()) == 50
    with Image.open(out) as img:
        assert img.size == (64, 64)

    manifest = read_manifest(f"{out}.manifest.json")
    assert manifest.guidance.scale == 0.5
    assert manifest.guidance.tau == 10
    assert manifest.guidance.dilation_factor == 2
    assert manifest.schedule.num_sample_steps == 50

    grid = str(tmp_path / "grid.png")
    code, result, _ = _run(capsys, "plot", "--trajectory", result["outputs"]["trajectory"], "--out", grid, "--quiet")
    assert code == 0
    assert result["panels"] == 10
    assert os.path.getsize(grid) > 0


def test_edit_rejects_lambda_out_of_range(tmp_path, capsys, inverted):
    code, _, err = _run(capsys, "edit", "--inverted", inverted, "--out", str(tmp_path / "e.png"),
                        "--class", "1", "--lambda", "1.5", "--quiet")
    assert code == 2
    assert _error(err)["error"] == "scale-out-of-range"


def test_edit_needs_a_condition(tmp_path, capsys, inverted):
    code, _, err = _run(capsys, "edit", "--inverted", inverted, "--out", str(tmp_path / "e.png"), "--quiet")
    assert code == 2
    assert _error(err)["error"] == "config-error"


def test_cached_reconstruction(tmp_path, capsys, inverted):
    code, result, _ = _run(capsys, "reconstruct", "--inverted", inverted, "--out", str(tmp_path / "r.png"),
                           "--use-cache", "--quiet")
    assert code == 0
    assert result["latent_relative_error"] < 1e-4


def test_rerun_reproduces_output(capsys, inverted):
    with open(inverted, "rb") as f:
        before = f.read()
    os.remove(inverted)
    code, result, _ = _run(capsys, "rerun", "--manifest", f"{inverted}.manifest.json", "--quiet")
    assert code == 0
    assert result["rerun"] == "invert"
    with open(inverted, "rb") as f:
        assert f.read() == before


def test_sweep_lambda(tmp_path, capsys, inverted):
    out_dir = str(tmp_path / "sweep")
    code, result, _ = _run(capsys, "sweep-lambda", "--inverted", inverted, "--out-dir", out_dir, "--class", "1", "--quiet")
    assert code == 0
    assert result["rows"] == 5
    rows = read_sweep_report(result["outputs"]["report"])
    assert [float(row["lambda"]) for row in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
    rmse = [float(row["source_rmse"]) for row in rows]
    assert min(rmse) == rmse[0]
    distance = [float(row["target_distance"]) for row in rows]
    assert distance[-1] < distance[0]
    assert os.path.exists(os.path.join(out_dir, "lambda_0.50.png"))
    print(f"✅ Sweep rmse {rmse}")


def test_sweep_on_padded_inversion_scores_the_original_region(tmp_path, capsys, dark_image):
    inv = str(tmp_path / "padded.ltsr")
    code, result, _ = _run(capsys, "invert", "--input", dark_image, "--out", inv, "--backend", GRAY,
                           "--tile-size", "48", "--pad", "--quiet")
    assert code == 0
    assert result["latent_shape"] == [96, 96, 1]

    out_dir = str(tmp_path / "sweep")
    code, result, _ = _run(capsys, "sweep-lambda", "--inverted", inv, "--out-dir", out_dir, "--class", "1",
                           "--values", "0,1", "--quiet")
    assert code == 0
    source = load_image(dark_image, 1).to(torch.float64)
    for row in read_sweep_report(result["outputs"]["report"]):
        edited = load_image(row["output"], 1).to(torch.float64)
        assert tuple(edited.shape[:2]) == (64, 64)
        # PNG rounding moves each pixel by at most half a level
        expected = float((edited - source).pow(2).mean().sqrt())
        assert abs(float(row["source_rmse"]) - expected) < 2.5e-3


def test_generate_from_noise(tmp_path, capsys):
    out = str(tmp_path / "gen.png")
    code, result, _ = _run(capsys, "generate", "--backend", GRAY, "--height", "64", "--width", "64",
                           "--class", "1", "--steps", "10", "--out", out, "--quiet")
    assert code == 0
    assert result["size"] == [64, 64]
    manifest = read_manifest(f"{out}.manifest.json")
    assert manifest.guidance.mode == GuidanceMode.NDCFG
    assert manifest.guidance.scale == 7.5


def test_generate_needs_a_size(tmp_path, capsys):
    code, _, err = _run(capsys, "generate", "--backend", GRAY, "--class", "1", "--out", str(tmp_path / "g.png"), "--quiet")
    assert code == 2
    assert _error(err)["error"] == "config-error"


def test_pad(tmp_path, capsys, dark_image):
    out = str(tmp_path / "padded.png")
    code, result, _ = _run(capsys, "pad", "--input", dark_image, "--tile-size", "48", "--out", out, "--quiet")
    assert code == 0
    assert result["original_size"] == [64, 64]
    assert result["padded_size"] == [96, 96]
    with Image.open(out) as img:
        assert img.size == (96, 96)


def test_backends_listing(capsys):
    code, result, _ = _run(capsys, "backends")
    assert code == 0
    assert result["success"] is True
    assert "backends" in result


@pytest.mark.slow
def test_toy_backend_end_to_end(tmp_path, capsys):
    """1024x1024 canvas in 256 tiles: invert, edit with a recorded trajectory, plot, rerun."""
    started = time.perf_counter()
    demo_dir = str(tmp_path / "demo")
    code, _, _ = _run(capsys, "demo", "--height", "1024", "--width", "1024", "--out-dir", demo_dir, "--quiet")
    assert code == 0
    inv = str(tmp_path / "toy.ltsr")
    code, result, _ = _run(capsys, "invert", "--input", os.path.join(demo_dir, "textures_stripes_0.png"),
                           "--out", inv, "--backend", "toy", "--tile-size", "256", "--quiet")
    assert code == 0
    assert result["latent_shape"] == [1024, 1024, 3]

    out = str(tmp_path / "toy_edit.png")
    record_dir = str(tmp_path / "trajectory")
    code, result, _ = _run(capsys, "edit", "--inverted", inv, "--out", out, "--class", "1",
                           "--record", "--record-dir", record_dir, "--quiet")
    assert code == 0
    assert result["outputs"]["trajectory"] == record_dir
    manifest = read_manifest(f"{out}.manifest.json")
    # 16 tiles at T=50: tau 37 and dilation from the 4x4 grid
    assert manifest.guidance.tau == 37
    assert manifest.guidance.dilation_factor == 4
    with Image.open(out) as img:
        assert img.size == (1024, 1024)

    grid = str(tmp_path / "grid.png")
    code, result, _ = _run(capsys, "plot", "--trajectory", record_dir, "--out", grid, "--quiet")
    assert code == 0
    assert result["panels"] > 0
    assert os.path.getsize(grid) > 0
    elapsed = time.perf_counter() - started
    assert elapsed < 120, f"invert -> edit -> plot took {elapsed:.1f}s"

    with open(out, "rb") as f:
        before = f.read()
    os.remove(out)
    code, result, _ = _run(capsys, "rerun", "--manifest", f"{out}.manifest.json", "--quiet")
    assert code == 0
    assert result["rerun"] == "edit" and result["exit_code"] == 0
    with open(out, "rb") as f:
        assert f.read() == before
    assert read_manifest(f"{out}.manifest.json").config == manifest.config
    print(f"✅ 1024x1024 toy run in {elapsed:.1f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
