"""PSNR and SSIM in the tonemapped and linear domains."""

from __future__ import annotations

import math

import numpy as np

from .radiometry import MU, mu_law


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = window.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(0, 1))
    return np.tensordot(win, window, axes=([-2, -1], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all valid Gaussian windows and channels.

    ``a`` and ``b`` are H x W or H x W x C arrays; the image must be at
    least ``size`` pixels on each side.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"image {a.shape[:2]} smaller than the {size}x{size} SSIM window")
    w = gaussian_window(size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(pred: np.ndarray, gt: np.ndarray, mu: float = MU) -> dict[str, float]:
    """PSNR/SSIM after mu-law tonemapping (``_T``) and on linear values (``_L``).

    Linear SSIM divides both images by the ground-truth maximum first.
    """
    pred = np.clip(np.asarray(pred, dtype=np.float64), 0.0, None)
    gt = np.asarray(gt, dtype=np.float64)
    tp, tg = mu_law(pred, mu), mu_law(gt, mu)
    scale = float(gt.max()) if gt.max() > 0 else 1.0
    return {
        "PSNR_T": psnr(tp, tg),
        "SSIM_T": ssim(np.clip(tp, 0, 1), np.clip(tg, 0, 1)),
        "PSNR_L": psnr(pred, gt),
        "SSIM_L": ssim(pred / scale, gt / scale),
    }
