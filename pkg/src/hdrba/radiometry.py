"""Radiometric transforms between LDR exposures, linear HDR and tonemapped values.

All functions are element-wise. Images are H x W x 3 float arrays; the
tonemapping curve also accepts :class:`~hdrba.autodiff.Tensor` inputs so it can
sit inside a loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log1p

GAMMA = 2.2
MU = 5000.0


@dataclass(frozen=True)
class GammaConfig:
    gamma: float = GAMMA
    mu: float = MU
    # "mu" normalizes the tonemap by log(1 + mu) so that T(1) = 1;
    # "hdr" divides by log(1 + H) instead (not normalized)
    tonemap_denominator: str = "mu"

    def __post_init__(self):
        if self.gamma <= 0 or self.mu <= 0:
            raise ValueError(f"gamma and mu must be positive, got {self.gamma}, {self.mu}")
        if self.tonemap_denominator not in ("mu", "hdr"):
            raise ValueError(f"tonemap_denominator must be 'mu' or 'hdr', got {self.tonemap_denominator!r}")


def _check_exposure(t: float) -> float:
    t = float(t)
    if not t > 0:
        raise ValueError(f"exposure time must be positive, got {t}")
    return t


def ldr_to_hdr(ldr: np.ndarray, t: float, gamma: float = GAMMA) -> np.ndarray:
    """Linearize an LDR exposure: ``I**gamma / t``."""
    t = _check_exposure(t)
    return np.power(ldr, gamma) / t


def synth_static_ldr(hdr: np.ndarray, t: float, gamma: float = GAMMA) -> np.ndarray:
    """Re-expose a linear image: ``clip((H * t)**(1/gamma), 0, 1)``."""
    t = _check_exposure(t)
    return np.clip(np.power(np.maximum(hdr * t, 0.0), 1.0 / gamma), 0.0, 1.0)


def build_input(ldr: np.ndarray, t: float, gamma: float = GAMMA) -> np.ndarray:
    """Stack the LDR image with its linearized version: H x W x 6."""
    return np.concatenate([ldr, ldr_to_hdr(ldr, t, gamma)], axis=-1)


def mu_law(hdr, mu: float = MU, denominator: str = "mu"):
    """Log-compress linear radiance: ``log(1 + mu H) / log(1 + mu)``.

    Works on ndarrays and on Tensors (differentiable). Inputs are expected to
    be non-negative.
    """
    if denominator == "hdr":
        if isinstance(hdr, Tensor):
            return log1p(hdr * mu) / log1p(hdr)
        return np.log1p(mu * hdr) / np.log1p(hdr)
    scale = math.log1p(mu)
    if isinstance(hdr, Tensor):
        return log1p(hdr * mu) / scale
    return np.log1p(mu * np.asarray(hdr, dtype=float)) / scale


def inverse_mu_law(tonemapped, mu: float = MU):
    return np.expm1(np.asarray(tonemapped) * math.log1p(mu)) / mu
