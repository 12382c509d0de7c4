import subprocess
import sys

import numpy as np
import pytest

from hdrba.cli import main
from hdrba.dataset import load_scene, make_static_scene
from hdrba.imageio import read_pfm, read_ppm


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--scenes", "2", "--size", "16", "--motion", "2", "--seed", "4"]) == 0
    (root / "cfg.txt").write_text("batch_size = 4\npatch_size = 12\nwidth = 4\niterations = 2\n")
    assert main(["train", "--data", str(root / "data"), "--config", str(root / "cfg.txt"), "--out", str(root / "run")]) == 0
    return root


def test_synth_layout(workspace):
    scene_dir = workspace / "data" / "scene_000"
    names = sorted(p.name for p in scene_dir.iterdir())
    assert names == ["exposures.txt", "gt.pfm", "ldr_0.ppm", "ldr_1.ppm", "ldr_2.ppm"]
    assert (workspace / "data" / "manifest.txt").is_file()


def test_synth_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--scenes", "1", "--size", "16", "--seed", "9"]) == 0
    for f in ("ldr_0.ppm", "ldr_1.ppm", "ldr_2.ppm", "exposures.txt", "gt.pfm"):
        assert (tmp_path / "a" / "scene_000" / f).read_bytes() == (tmp_path / "b" / "scene_000" / f).read_bytes()


def test_synth_zero_motion_is_static(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--scenes", "1", "--size", "16", "--motion", "0"]) == 0
    scene = load_scene(tmp_path / "scene_000")
    static = make_static_scene(scene.gt, scene.exposures)
    # files hold 8-bit LDRs, so compare at quantization precision
    np.testing.assert_allclose(scene.ldrs, static.ldrs, atol=0.5 / 255 + 1e-12)


def test_train_outputs(workspace):
    run = workspace / "run"
    assert {"model.ckpt", "loss.csv", "manifest.txt"} <= {p.name for p in run.iterdir()}
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "iter,loss_total,loss_coarse,loss_fine,loss_final" and len(lines) == 3
    manifest = (run / "manifest.txt").read_text()
    assert "seed = 0" in manifest and "width = 4" in manifest and "wall_clock_s" in manifest


def test_infer_then_eval(workspace, capsys):
    out = workspace / "inf"
    scene = workspace / "data" / "scene_001"
    assert main(["infer", "--ckpt", str(workspace / "run" / "model.ckpt"), "--scene", str(scene), "--out", str(out)]) == 0
    hdr = read_pfm(out / "hdr.pfm")
    mask = read_pfm(out / "mask.pfm")
    assert hdr.shape == (16, 16, 3) and read_pfm(out / "coarse.pfm").shape == (16, 16, 3)
    assert mask.shape == (16, 16) and np.all((mask > 0) & (mask < 1))
    assert read_ppm(out / "preview.ppm").shape == (16, 16, 3)
    capsys.readouterr()
    assert main(["eval", "--pred", str(out / "hdr.pfm"), "--gt", str(scene / "gt.pfm")]) == 0
    values = [float(v) for v in capsys.readouterr().out.split()]
    assert len(values) == 4 and all(np.isfinite(values))


def test_eval_identity(workspace, capsys):
    gt = str(workspace / "data" / "scene_000" / "gt.pfm")
    assert main(["eval", "--pred", gt, "--gt", gt]) == 0
    assert capsys.readouterr().out.strip() == "inf 1.0 inf 1.0"


def test_exit_codes(workspace, tmp_path):
    gt = str(workspace / "data" / "scene_000" / "gt.pfm")
    assert main(["eval", "--pred", str(tmp_path / "missing.pfm"), "--gt", gt]) == 2
    (tmp_path / "junk.pfm").write_bytes(b"P7\n")
    assert main(["eval", "--pred", str(tmp_path / "junk.pfm"), "--gt", gt]) == 2
    (tmp_path / "bad.txt").write_text("colour = red\n")
    assert main(["train", "--data", str(workspace / "data"), "--config", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "r")]) == 1
    assert main(["gradcheck", "--op", "no_such_op"]) == 1
    with pytest.raises(SystemExit) as info:
        main(["synth"])
    assert info.value.code == 1


def test_gradcheck_single_op(capsys):
    assert main(["gradcheck", "--op", "sigmoid"]) == 0
    out = capsys.readouterr().out
    assert "sigmoid" in out and "PASS" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hdrba", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
