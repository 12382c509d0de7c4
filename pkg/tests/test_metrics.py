import math

import numpy as np
import pytest

from hdrba.metrics import evaluate, gaussian_window, psnr, ssim


def test_psnr_closed_form():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)  # MSE = 0.01
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_identical_is_inf():
    a = np.random.default_rng(42).uniform(size=(3, 3))
    assert psnr(a, a) == math.inf


def test_ssim_identity_exact():
    a = np.random.default_rng(42).uniform(size=(16, 16, 3))
    assert ssim(a, a) == 1.0


def test_gaussian_window_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(w, w.T)


def _ssim_loop(a, b, size=11, sigma=1.5, data_range=1.0):
    ax = [math.exp(-((i - (size - 1) / 2) ** 2) / (2 * sigma**2)) for i in range(size)]
    win = [[u * v for v in ax] for u in ax]
    total = sum(map(sum, win))
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for ch in range(a.shape[2]):
        for y in range(a.shape[0] - size + 1):
            for x in range(a.shape[1] - size + 1):
                ma = mb = saa = sbb = sab = 0.0
                for i in range(size):
                    for j in range(size):
                        g = win[i][j] / total
                        p, q = a[y + i, x + j, ch], b[y + i, x + j, ch]
                        ma += g * p
                        mb += g * q
                        saa += g * p * p
                        sbb += g * q * q
                        sab += g * p * q
                va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def test_ssim_matches_loop():
    rng = np.random.default_rng(42)
    a = rng.uniform(size=(14, 13, 2))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_loop(a, b), abs=1e-6)


def test_ssim_range_and_symmetry():
    rng = np.random.default_rng(42)
    a, b = rng.uniform(size=(2, 12, 12))
    s = ssim(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 20)), np.zeros((5, 20)))


def test_evaluate_identical():
    gt = np.random.default_rng(42).lognormal(-1, 1, (12, 12, 3))
    m = evaluate(gt, gt)
    assert m == {"PSNR_T": math.inf, "SSIM_T": 1.0, "PSNR_L": math.inf, "SSIM_L": 1.0}


def test_evaluate_linear_ssim_uses_gt_max():
    rng = np.random.default_rng(42)
    gt = rng.lognormal(0, 1, (12, 12, 3))
    pred = gt * 1.05
    m = evaluate(pred, gt)
    scale = gt.max()
    assert m["SSIM_L"] == pytest.approx(ssim(pred / scale, gt / scale), abs=1e-15)
    assert m["PSNR_T"] > 20
