import json
import subprocess
import sys

import numpy as np
import pytest

from featreg.cli import (
    build_parser,
    build_registration_config,
    main,
    parse_config_file,
)
from featreg.model import FeatureMap
from featreg.tensor_io import read_fmap, write_fmap


def run(*argv):
    return main([str(a) for a in argv])


def synth_dataset(out_dir, kind="affine", count=2, seed=3, size=96, grid=48):
    code = run("synth", "--kind", kind, "--count", count, "--seed", seed,
               "--out-dir", out_dir, "--size", size, "--grid", grid,
               "--channels", 12)
    assert code == 0
    return out_dir


def register_args(synth_dir, results_dir, size=96, **extra):
    argv = ["register", "--manifest", synth_dir / "manifest.csv",
            "--features-dir", synth_dir, "--results-dir", results_dir,
            "--resample-size", size, "--keypoints-per-sampler", 200,
            "--correlation-resolution", "feature_native",
            "--stage2-kind", "none"]
    for k, v in extra.items():
        argv += [f"--{k.replace('_', '-')}", v]
    return argv


# ---------------------------------------------------------------------------
# configuration plumbing

def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "reg.conf"
    cfg.write_text(
        "# comment line\n"
        "resample_size = 740   # trailing comment\n"
        "t-ic = 2.5\n"
        "\n"
        "stage2_kind = quadratic\n")
    values = parse_config_file(cfg)
    assert values == {"resample_size": "740", "t_ic": "2.5",
                      "stage2_kind": "quadratic"}


def test_config_file_rejects_bad_lines(tmp_path):
    cfg = tmp_path / "reg.conf"
    cfg.write_text("resample_size 740\n")
    with pytest.raises(Exception, match="reg.conf:1"):
        parse_config_file(cfg)


def test_flag_overrides_config_file_overrides_preset(tmp_path):
    cfg = tmp_path / "reg.conf"
    cfg.write_text("resample_size = 512\nt_trans_stage1 = 30\n")
    parser = build_parser()
    args = parser.parse_args([
        "register", "--preset", "fire", "--config", str(cfg),
        "--resample-size", "256"])
    built = build_registration_config(args)
    assert built.resample_size == 256       # flag wins
    assert built.t_trans_stage1 == 30.0     # file beats preset
    assert built.t_trans_stage2 == 15.0     # preset fills the rest


def test_preset_bundles():
    parser = build_parser()
    for preset, m, t1, t2 in (("fire", 920, 25, 15),
                              ("flori21", 1024, 40, 30),
                              ("lsfg", 740, 25, 25)):
        args = parser.parse_args(["register", "--preset", preset])
        built = build_registration_config(args)
        assert (built.resample_size, built.t_trans_stage1,
                built.t_trans_stage2, built.t_ic) == (m, t1, t2, 3.0)


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "reg.conf"
    cfg.write_text("warp_speed = 9\n")
    code = run("register", "--config", cfg, "--manifest", "whatever",
               "--features-dir", ".", "--results-dir", tmp_path)
    assert code == 1
    assert "warp_speed" in capsys.readouterr().err


def test_usage_error_exits_1(capsys):
    assert run("register") == 1
    assert "--fixed" in capsys.readouterr().err
    assert run("no-such-command") == 1


# ---------------------------------------------------------------------------
# synth

def test_synth_writes_complete_pairs(tmp_path):
    out = synth_dataset(tmp_path / "synth")
    for pid in ("affine_000", "affine_001"):
        for suffix in (".fixed.png", ".moving.png", ".landmarks.csv",
                       ".gt.txt", ".fixed.fmap", ".moving.fmap"):
            assert (out / f"{pid}{suffix}").exists(), suffix
    manifest = (out / "manifest.csv").read_text()
    assert manifest.splitlines()[0] == \
        "pair_id,fixed_path,moving_path,landmarks_path,category"
    assert "affine_001.fixed.png" in manifest


def test_synth_is_deterministic(tmp_path):
    a = synth_dataset(tmp_path / "a", count=1, seed=9)
    b = synth_dataset(tmp_path / "b", count=1, seed=9)
    for name in ("affine_000.landmarks.csv", "affine_000.gt.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "affine_000.fixed.fmap").read_bytes() == \
        (b / "affine_000.fixed.fmap").read_bytes()


def test_synth_zero_count_writes_header_only_manifest(tmp_path):
    out = tmp_path / "empty"
    assert run("synth", "--kind", "poly3", "--count", 0,
               "--out-dir", out) == 0
    assert (out / "manifest.csv").read_text() == \
        "pair_id,fixed_path,moving_path,landmarks_path,category\n"


def test_synth_composite_kind_writes_two_ground_truth_files(tmp_path):
    out = tmp_path / "chain"
    assert run("synth", "--kind", "homography_cubic", "--count", 1,
               "--out-dir", out, "--size", 96, "--no-features") == 0
    assert (out / "homography_cubic_000.gt.stage1.txt").exists()
    assert (out / "homography_cubic_000.gt.stage2.txt").exists()
    assert not (out / "homography_cubic_000.gt.txt").exists()
    assert not (out / "homography_cubic_000.fixed.fmap").exists()


# ---------------------------------------------------------------------------
# register

def test_register_manifest_then_evaluate_round_trip(tmp_path, capsys):
    synth = synth_dataset(tmp_path / "synth")
    results = tmp_path / "results"
    assert run(*register_args(synth, results)) == 0
    for pid in ("affine_000", "affine_001"):
        assert (results / f"{pid}.stage1.txt").exists()
        diag = json.loads((results / f"{pid}.json").read_text())
        assert diag["status"] == "success"
        assert diag["stage1"]["kept_after_residual"] >= 4
    capsys.readouterr()

    assert run("evaluate", "--manifest", synth / "manifest.csv",
               "--results-dir", results, "--t-auc", 25, "--json") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["success_rate"] == 1.0
    assert report["mean_mle"] < 2.0
    assert (results / "report.json").exists()
    assert (results / "accuracy_curve.png").exists()
    assert (results / "pair_errors.png").exists()
    csv_lines = (results / "report.csv").read_text().splitlines()
    assert csv_lines[0] == "pair_id,category,mle,success"
    assert len(csv_lines) == 3
    assert csv_lines[1].startswith("affine_000,affine,")
    assert csv_lines[1].endswith(",true")


def test_register_single_pair_with_discovery_and_overlay(tmp_path):
    synth = synth_dataset(tmp_path / "synth", count=1)
    out = tmp_path / "single" / "result.txt"
    code = run("register",
               "--fixed", synth / "affine_000.fixed.png",
               "--moving", synth / "affine_000.moving.png",
               "--features-dir", synth, "--pair-id", "affine_000",
               "--out", out, "--resample-size", 96,
               "--keypoints-per-sampler", 200,
               "--correlation-resolution", "feature_native",
               "--stage2-kind", "none",
               "--overlay", tmp_path / "ov.png",
               "--warped", tmp_path / "warp.png")
    assert code == 0
    assert out.exists()
    assert out.with_suffix(".json").exists()
    assert (tmp_path / "ov.png").exists()
    assert (tmp_path / "warp.png").exists()


def test_register_two_stage_writes_stage2_file(tmp_path):
    synth = synth_dataset(tmp_path / "synth", count=1, size=128, grid=64)
    results = tmp_path / "results"
    argv = register_args(synth, results, size=128)
    argv[argv.index("--stage2-kind") + 1] = "quadratic"
    assert run(*argv) == 0
    assert (results / "affine_000.stage1.txt").exists()
    assert (results / "affine_000.stage2.txt").exists()
    diag = json.loads((results / "affine_000.json").read_text())
    assert diag["stage2"]["kind"] == "quadratic"


def test_register_failure_exits_2_and_keeps_diagnostics(tmp_path, capsys):
    synth = synth_dataset(tmp_path / "synth", count=1)
    # constant fixed features: every backward match collapses to one cell,
    # so the consistency filter strands the fit
    moving = read_fmap(synth / "affine_000.moving.fmap")
    flat = np.broadcast_to(moving.data[:, :1, :1], moving.data.shape)
    write_fmap(FeatureMap(np.ascontiguousarray(flat), normalized=True),
               synth / "affine_000.fixed.fmap")
    results = tmp_path / "results"
    code = run(*register_args(synth, results), "--t-ic", 0.5)
    assert code == 2
    assert not (results / "affine_000.stage1.txt").exists()
    diag = json.loads((results / "affine_000.json").read_text())
    assert diag["status"] == "failed_insufficient"
    assert "InsufficientCorrespondences" in diag["failure_reason"]
    assert "affine_000" in capsys.readouterr().out


def test_evaluate_counts_missing_results_as_failures(tmp_path, capsys):
    synth = synth_dataset(tmp_path / "synth")
    results = tmp_path / "results"
    assert run(*register_args(synth, results)) == 0
    (results / "affine_001.stage1.txt").unlink()
    (results / "affine_001.json").unlink()
    capsys.readouterr()
    assert run("evaluate", "--manifest", synth / "manifest.csv",
               "--results-dir", results, "--t-auc", 25,
               "--no-figures", "--json") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["success_rate"] == 0.5
    assert report["pairs"][1] == {"pair_id": "affine_001", "mle": None}
    assert report["notes"] == {"affine_001": "missing result"}


def test_evaluate_requires_t_auc(tmp_path, capsys):
    synth = synth_dataset(tmp_path / "synth", count=0)
    code = run("evaluate", "--manifest", synth / "manifest.csv",
               "--results-dir", tmp_path)
    assert code == 1
    assert "t_auc" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# filters-debug

def test_filters_debug_dumps_stats_and_rows(tmp_path):
    synth = synth_dataset(tmp_path / "synth", count=1)
    out = tmp_path / "dump"
    code = run("filters-debug",
               "--fixed-fmap", synth / "affine_000.fixed.fmap",
               "--moving-fmap", synth / "affine_000.moving.fmap",
               "--count", 30, "--indices", "0,2", "--out-dir", out,
               "--resolution", "feature_native", "--image-size", 96)
    assert code == 0
    doc = json.loads((out / "filters.json").read_text())
    assert doc["points"] == 30
    assert 0 < doc["kept_after_residual"] <= doc["kept_after_ic"] <= 30
    assert len(doc["correspondences"]) == 30
    row = read_fmap(out / "row_0002.fmap")
    assert row.data.shape == (1, 48, 48)


# ---------------------------------------------------------------------------
# process-level behavior

def test_module_entry_point_exit_code(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "featreg.cli", "synth", "--kind", "identity",
         "--count", "0", "--out-dir", str(tmp_path / "o")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote 0 pairs" in proc.stdout


def test_parallel_jobs_match_serial(tmp_path):
    synth = synth_dataset(tmp_path / "synth", count=2)
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    assert run(*register_args(synth, serial)) == 0
    assert run(*register_args(synth, parallel), "--jobs", 2) == 0
    for pid in ("affine_000", "affine_001"):
        assert (serial / f"{pid}.stage1.txt").read_bytes() == \
            (parallel / f"{pid}.stage1.txt").read_bytes()
