import json
import os
import struct
import subprocess
from pathlib import Path

import numpy as np
import pytest

DIVREG = os.environ.get("DIVREG_CLI", "divreg")
SVF_HEADER = 88


def run(*args, check=None):
    proc = subprocess.run([DIVREG, *map(str, args)], capture_output=True, text=True)
    if check is not None:
        assert proc.returncode == check, proc.stderr + proc.stdout
    return proc


def run_json(*args):
    proc = run("--json", *args, check=0)
    return json.loads(proc.stdout)


def read_nifti_f64(path):
    raw = Path(path).read_bytes()
    dims = struct.unpack_from("<8h", raw, 40)
    datatype = struct.unpack_from("<h", raw, 70)[0]
    offset = int(struct.unpack_from("<f", raw, 108)[0])
    assert datatype == 64
    n = int(np.prod(dims[1 : dims[0] + 1]))
    return np.frombuffer(raw, dtype="<f8", count=n, offset=offset)


def rewrite_svf(src, dst, fn):
    raw = bytearray(Path(src).read_bytes())
    (count,) = struct.unpack_from("<Q", raw, SVF_HEADER - 8)
    coeffs = np.frombuffer(bytes(raw[SVF_HEADER:]), dtype="<f8", count=count)
    raw[SVF_HEADER:] = fn(coeffs.copy()).astype("<f8").tobytes()
    Path(dst).write_bytes(bytes(raw))


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    prefix = d / "p"
    run("synth", "--size", 20, "--seed", 5, "--amplitude", 0.8, "--gt-grid-spacing", 4, "--steps", 16,
        "--out-prefix", prefix, check=0)
    return prefix


def test_synth_is_deterministic(tmp_path, pair):
    b = tmp_path / "b"
    run("synth", "--size", 20, "--seed", 5, "--amplitude", 0.8, "--gt-grid-spacing", 4, "--steps", 16,
        "--out-prefix", b, check=0)
    for suffix in ["_fixed.nii", "_moving.nii", "_mask.nii", "_gt_classical.svf", "_gt_conforming.svf"]:
        assert Path(str(pair) + suffix).read_bytes() == Path(str(b) + suffix).read_bytes(), suffix


def test_synth_seed_changes_output(tmp_path, pair):
    c = tmp_path / "c"
    run("synth", "--size", 20, "--seed", 6, "--amplitude", 0.8, "--gt-grid-spacing", 4, "--steps", 16,
        "--out-prefix", c, check=0)
    assert Path(str(pair) + "_moving.nii").read_bytes() != Path(str(c) + "_moving.nii").read_bytes()


def test_identity_registration_exits_zero(tmp_path, pair):
    fixed = str(pair) + "_fixed.nii"
    out = tmp_path / "id.svf"
    summary = run_json("register", fixed, fixed, "--mask", str(pair) + "_mask.nii", "--out", out,
                       "--levels", 1, "--steps", 8, "--grid-spacing", 5, "--similarity", "ssd",
                       "--interp", "trilinear")
    assert summary["exit_code"] == 0
    assert summary["max_abs_coefficient"] <= 1e-6
    report = json.loads(Path(str(out) + ".report.json").read_text())
    assert len(report["levels"]) == 1
    assert Path(str(out) + ".json").exists()


def test_missing_mask_is_a_usage_error(tmp_path, pair):
    fixed = str(pair) + "_fixed.nii"
    proc = run("register", fixed, fixed, "--out", tmp_path / "x.svf")
    assert proc.returncode == 12
    assert "--mask" in proc.stderr
    assert not (tmp_path / "x.svf").exists()


def test_missing_input_is_a_parse_error(tmp_path, pair):
    proc = run("register", tmp_path / "absent.nii", str(pair) + "_fixed.nii", "--mask", str(pair) + "_mask.nii",
               "--out", tmp_path / "x.svf")
    assert proc.returncode == 11


def test_unknown_option_is_a_usage_error():
    assert run("register", "--no-such-flag").returncode == 12
    assert run().returncode == 12


def test_corrupt_image_is_a_parse_error(tmp_path, pair):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"not a nifti file")
    proc = run("exp", str(pair) + "_gt_conforming.svf", "--reference", bad, "--jacobian", tmp_path / "j.nii")
    assert proc.returncode == 11


def test_mismatched_mask_is_a_geometry_error(tmp_path, pair):
    other = tmp_path / "o"
    run("synth", "--size", 12, "--out-prefix", other, check=0)
    proc = run("exp", str(pair) + "_gt_conforming.svf", "--reference", str(pair) + "_fixed.nii",
               "--jacobian", tmp_path / "j.nii", "--mask", str(other) + "_mask.nii")
    assert proc.returncode == 13


def test_divcheck_projected_versus_random(tmp_path, pair):
    mask = str(pair) + "_mask.nii"
    rng = np.random.default_rng(11)
    noisy = tmp_path / "noisy.svf"
    rewrite_svf(str(pair) + "_gt_conforming.svf", noisy, lambda c: c + rng.normal(0.0, 0.5, c.shape))
    before = run_json("divcheck", noisy, "--mask", mask, "--samples", 20000)
    assert before["bound_holds"]
    assert before["max_abs_divergence"] > 1e-2

    projected = tmp_path / "projected.svf"
    p = run_json("project", noisy, "--mask", mask, "--out", projected)
    assert p["residual_after"] <= 1e-10
    after = run_json("divcheck", projected, "--mask", mask, "--samples", 20000)
    assert after["max_abs_psi"] <= 1e-10
    assert after["max_abs_divergence"] <= 1e-10
    assert after["bound_holds"]


def test_exp_of_zero_field_is_identity(tmp_path, pair):
    zero = tmp_path / "zero.svf"
    rewrite_svf(str(pair) + "_gt_conforming.svf", zero, np.zeros_like)
    ref = str(pair) + "_fixed.nii"
    det, logdet, disp = tmp_path / "det.nii", tmp_path / "logdet.nii", tmp_path / "disp.nii"
    run("exp", zero, "--reference", ref, "--jacobian", det, "--out", disp, "--steps", 8, check=0)
    run("exp", zero, "--reference", ref, "--jacobian", logdet, "--log-jacobian", "--steps", 8, check=0)
    assert np.all(read_nifti_f64(det) == 1.0)
    assert np.all(read_nifti_f64(logdet) == 0.0)
    assert np.all(read_nifti_f64(disp) == 0.0)


def test_points_round_trip_through_inverse(tmp_path, pair):
    svf = str(pair) + "_gt_conforming.svf"
    pts = tmp_path / "pts.csv"
    pts.write_text("x,y,z\n8,9,10\n11.5,10.25,9\n")
    fwd, back = tmp_path / "fwd.csv", tmp_path / "back.csv"
    run("warp", svf, "--points", pts, "--out", fwd, "--steps", 64, check=0)
    run("warp", svf, "--points", fwd, "--out", back, "--steps", 64, "--inverse", check=0)
    start = np.loadtxt(pts, delimiter=",", skiprows=1)
    moved = np.loadtxt(fwd, delimiter=",", skiprows=1)[:, :3]
    end = np.loadtxt(back, delimiter=",", skiprows=1)[:, :3]
    assert np.max(np.abs(moved - start)) > 1e-3
    assert np.max(np.abs(end - start)) < 1e-2


def test_export_constraints_matches_project(tmp_path, pair):
    prefix = tmp_path / "cons"
    s = run_json("export-constraints", str(pair) + "_gt_conforming.svf", "--mask", str(pair) + "_mask.nii",
                 "--out-prefix", prefix)
    triplets = np.loadtxt(str(prefix) + ".triplets.txt")
    manifest = np.loadtxt(str(prefix) + ".manifest.txt")
    assert triplets.shape[0] == s["nonzeros"]
    assert manifest.shape[0] == s["rows"]
    assert int(triplets[:, 0].max()) == s["rows"] - 1
