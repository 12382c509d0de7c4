import numpy as np
import pytest

from hdrba.dataset import (
    Scene,
    SceneError,
    dihedral,
    dihedral_inverse,
    load_scene,
    make_batch,
    make_static_scene,
    quantize_scene,
    sample_patches,
    save_scene,
    synth_dynamic_scene,
)
from hdrba.radiometry import ldr_to_hdr, synth_static_ldr


@pytest.fixture(scope="module")
def scene():
    return synth_dynamic_scene(3, 32, motion_px=3)


def _write_exposures(directory, text):
    (directory / "exposures.txt").write_text(text)


def test_load_parses_exposures(tmp_path, scene):
    save_scene(scene, tmp_path)
    _write_exposures(tmp_path, "0.25\n1\n4\n")
    assert load_scene(tmp_path).exposures == (0.25, 1.0, 4.0)


def test_load_bias_mode(tmp_path, scene):
    save_scene(scene, tmp_path)
    _write_exposures(tmp_path, "-2\n0\n2\n")
    assert load_scene(tmp_path, exposure_mode="bias").exposures == (0.25, 1.0, 4.0)


def test_load_rejects_decreasing(tmp_path, scene):
    save_scene(scene, tmp_path)
    _write_exposures(tmp_path, "4\n1\n0.25\n")
    with pytest.raises(SceneError, match="increasing"):
        load_scene(tmp_path)


def test_load_names_missing_file(tmp_path, scene):
    save_scene(scene, tmp_path)
    (tmp_path / "ldr_2.ppm").unlink()
    with pytest.raises(SceneError, match="ldr_2.ppm"):
        load_scene(tmp_path)


def test_load_size_mismatch(tmp_path, scene):
    save_scene(scene, tmp_path)
    save_scene(synth_dynamic_scene(4, 16), tmp_path / "small")
    (tmp_path / "small" / "ldr_1.ppm").replace(tmp_path / "ldr_1.ppm")
    with pytest.raises(SceneError, match="ldr_1.ppm"):
        load_scene(tmp_path)


def test_save_load_round_trip(tmp_path, scene):
    q = quantize_scene(scene)
    save_scene(q, tmp_path)
    back = load_scene(tmp_path)
    assert back.exposures == q.exposures
    assert back.ldrs.tobytes() == q.ldrs.tobytes()
    assert back.gt.tobytes() == q.gt.tobytes()


def test_scene_validation():
    with pytest.raises(SceneError):
        Scene(np.zeros((3, 4, 4, 3)), (1.0, 1.0, 4.0), np.zeros((4, 4, 3)))
    with pytest.raises(SceneError):
        Scene(np.zeros((3, 4, 4, 3)), (0.25, 1.0, 4.0), np.zeros((4, 5, 3)))


def test_static_scene_round_trip():
    rng = np.random.default_rng(42)
    hdr = rng.lognormal(-2, 1.5, (16, 16, 3))
    s = make_static_scene(hdr, (0.25, 1.0, 4.0))
    for ldr, t in zip(s.ldrs, s.exposures):
        ok = hdr * t < 1
        np.testing.assert_allclose(ldr_to_hdr(ldr, t)[ok], hdr[ok], rtol=1e-6)
        assert np.all(ldr[hdr * t >= 1] == 1.0)


def test_zero_motion_is_static(scene):
    still = synth_dynamic_scene(3, 32, motion_px=0)
    ref = make_static_scene(still.gt, still.exposures)
    assert still.ldrs.tobytes() == ref.ldrs.tobytes()


def test_motion_moves_the_sprite(scene):
    # aligned stacks re-expose the middle frame; a moving sprite breaks that
    for i in (0, 2):
        assert not np.array_equal(scene.ldrs[i], synth_static_ldr(scene.gt, scene.exposures[i]))
    np.testing.assert_array_equal(scene.ldrs[1], synth_static_ldr(scene.gt, scene.exposures[1]))


def test_synth_deterministic():
    a, b = synth_dynamic_scene(11, 24), synth_dynamic_scene(11, 24)
    assert a.ldrs.tobytes() == b.ldrs.tobytes() and a.gt.tobytes() == b.gt.tobytes()


def test_synth_dynamic_range():
    gt = synth_dynamic_scene(0, 64).gt
    assert gt.max() == pytest.approx(1.0)
    assert np.log10(gt.max() / gt[gt > 0].min()) >= 2.0


def test_saturation_calibration_over_100_seeds():
    fractions = []
    for seed in range(100):
        s = synth_dynamic_scene(seed, 32)
        # the sprite may hide the background peak in the middle frame
        if s.gt.max() * s.exposures[2] >= 4:
            fractions.append(np.mean(s.ldrs[2] == 1.0))
    assert len(fractions) >= 80
    assert min(fractions) >= 0.05


def test_dihedral_identity_and_inverse():
    rng = np.random.default_rng(42)
    img = rng.standard_normal((5, 5, 3))
    np.testing.assert_array_equal(dihedral(img, 0), img)
    outs = set()
    for k in range(8):
        out = dihedral(img, k)
        np.testing.assert_array_equal(dihedral(out, dihedral_inverse(k)), img)
        outs.add(out.tobytes())
    assert len(outs) == 8
    with pytest.raises(ValueError):
        dihedral(img, 8)


def test_patch_crops_in_bounds(scene):
    samples = sample_patches(scene, 10_000, size=12, seed=7)
    ys = np.array([s.origin[0] for s in samples])
    xs = np.array([s.origin[1] for s in samples])
    assert ys.min() == 0 and xs.min() == 0
    assert ys.max() == 32 - 12 and xs.max() == 32 - 12
    assert {s.aug for s in samples} == set(range(8))


def test_patch_augmentation_shared_across_exposures(scene):
    (s,) = sample_patches(scene, 1, size=8, seed=3)
    y, x = s.origin
    for i in range(3):
        np.testing.assert_array_equal(s.ldrs[i], dihedral(scene.ldrs[i, y : y + 8, x : x + 8], s.aug))
    np.testing.assert_array_equal(s.gt, dihedral(scene.gt[y : y + 8, x : x + 8], s.aug))


def test_patch_larger_than_scene(scene):
    with pytest.raises(SceneError):
        sample_patches(scene, 1, size=33)


@pytest.mark.parametrize("batch, counts", [(16, (12, 4)), (4, (3, 1)), (8, (6, 2))])
def test_batch_ratio(scene, batch, counts):
    static = [make_static_scene(scene.gt, scene.exposures)]
    assert make_batch([scene], static, batch, seed=1, size=8).counts() == counts


def test_batch_indivisible(scene):
    with pytest.raises(ValueError):
        make_batch([scene], [scene], 10, size=8)


def test_batch_deterministic_and_static_exact(scene):
    static = [make_static_scene(scene.gt, scene.exposures)]
    a = make_batch([scene], static, 8, seed=5, size=8)
    b = make_batch([scene], static, 8, seed=5, size=8)
    xa, ga = a.arrays()
    xb, gb = b.arrays()
    assert all(u.tobytes() == v.tobytes() for u, v in zip(xa, xb)) and ga.tobytes() == gb.tobytes()
    for s in a.samples:
        if s.is_static:
            for ldr, t in zip(s.ldrs, s.exposures):
                assert synth_static_ldr(s.gt, t).tobytes() == ldr.tobytes()
    x = np.stack(a.arrays()[0])
    assert np.all((x[:, :, :3] >= 0) & (x[:, :, :3] <= 1)) and np.all(x[:, :, 3:] >= 0)
