"""Training losses on tonemapped HDR images, and the weighted total.

All losses take NCHW tensors of linear radiance (>= 0) and compare them after
mu-law tonemapping.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import checkpoint
from .autodiff import Tensor, as_tensor, l2norm, relu
from .ops import avg_pool2d, conv2d
from .radiometry import MU, mu_law

OUTPUTS = ("coarse", "fine", "final")
TERMS = ("recon", "color", "vgg", "tv")


def _same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def recon_loss(pred, target, mu: float = MU) -> Tensor:
    """Mean absolute difference of tonemapped images."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target)
    return (mu_law(pred, mu) - mu_law(target, mu)).abs().mean()


def color_loss(pred, target, mu: float = MU, eps: float = 1e-8) -> Tensor:
    """One minus the mean cosine similarity of per-pixel RGB vectors."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target)
    a, b = mu_law(pred, mu), mu_law(target, mu)
    dot = (a * b).sum(axis=1)
    cos = dot / (l2norm(a, axis=1, keepdims=False) * l2norm(b, axis=1, keepdims=False) + eps)
    return 1.0 - cos.mean()


def tv_loss(pred, mu: float = MU) -> Tensor:
    """Anisotropic total variation of the tonemapped image.

    Sum of |forward differences| along x and y, divided by the total number of
    differences taken.
    """
    t = mu_law(as_tensor(pred), mu)
    n, c, h, w = t.shape
    dx = (t[:, :, :, 1:] - t[:, :, :, :-1]).abs().sum()
    dy = (t[:, :, 1:, :] - t[:, :, :-1, :]).abs().sum()
    return (dx + dy) / float(n * c * (h * (w - 1) + (h - 1) * w))


class PerceptualExtractor:
    """Fixed three-block conv feature pyramid standing in for a pretrained VGG.

    Block k: (pool unless k == 1) -> conv3x3 -> relu -> conv3x3 -> relu.
    Weights are drawn from a seeded Gaussian (He scaling) and never trained.
    """

    widths = (8, 16, 32)

    def __init__(self, weights: Mapping[str, np.ndarray]):
        self.weights = {k: np.asarray(v, dtype=np.float64) for k, v in weights.items()}
        for name, shape in self.expected_shapes().items():
            if name not in self.weights:
                raise ValueError(f"perceptual extractor is missing {name!r}")
            if self.weights[name].shape != shape:
                raise ValueError(f"{name}: shape {self.weights[name].shape} != {shape}")

    @classmethod
    def expected_shapes(cls) -> dict[str, tuple[int, ...]]:
        shapes = {}
        cin = 3
        for k, width in enumerate(cls.widths, start=1):
            shapes[f"block{k}.conv1.weight"] = (width, cin, 3, 3)
            shapes[f"block{k}.conv1.bias"] = (width,)
            shapes[f"block{k}.conv2.weight"] = (width, width, 3, 3)
            shapes[f"block{k}.conv2.bias"] = (width,)
            cin = width
        return shapes

    @classmethod
    def from_seed(cls, seed: int = 0) -> "PerceptualExtractor":
        rng = np.random.default_rng(seed)
        weights = {}
        for name, shape in cls.expected_shapes().items():
            if name.endswith("bias"):
                weights[name] = np.zeros(shape)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                weights[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        return cls(weights)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PerceptualExtractor":
        weights, _ = checkpoint.load(path, expected=cls.expected_shapes())
        return cls(weights)

    def save(self, path: str | os.PathLike) -> None:
        checkpoint.save(path, self.weights, meta={"kind": "perceptual-extractor"})

    def features(self, x) -> list[Tensor]:
        feats = []
        h = as_tensor(x)
        for k in range(1, len(self.widths) + 1):
            if k > 1:
                h = avg_pool2d(h, 2)
            w = self.weights
            h = relu(conv2d(h, w[f"block{k}.conv1.weight"], w[f"block{k}.conv1.bias"], padding=1))
            h = relu(conv2d(h, w[f"block{k}.conv2.weight"], w[f"block{k}.conv2.bias"], padding=1))
            feats.append(h)
        return feats


def perceptual_loss(pred, target, extractor: PerceptualExtractor, mu: float = MU) -> Tensor:
    """Sum over the three blocks of the mean |feature difference|."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target)
    fa = extractor.features(mu_law(pred, mu))
    fb = extractor.features(mu_law(target, mu))
    total = None
    for a, b in zip(fa, fb):
        term = (a - b).abs().mean()
        total = term if total is None else total + term
    return total


@dataclass(frozen=True)
class LossWeights:
    """Per-output weights for (recon, color, vgg, tv)."""

    coarse: tuple[float, float, float, float] = (1.0, 1.0, 0.001, 0.1)
    fine: tuple[float, float, float, float] = (1.0, 1.0, 0.001, 0.1)
    final: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def get(self, output: str, term: str) -> float:
        return float(getattr(self, output)[TERMS.index(term)])


@dataclass
class LossReport:
    terms: dict[str, dict[str, float]] = field(default_factory=dict)
    weights: LossWeights = field(default_factory=LossWeights)
    total: Tensor | None = None

    def per_output(self, output: str) -> float:
        acc = 0.0
        for term, value in self.terms[output].items():
            acc += self.weights.get(output, term) * value
        return acc

    def reconstructed_total(self) -> float:
        acc = 0.0
        for output in OUTPUTS:
            for term, value in self.terms[output].items():
                acc += self.weights.get(output, term) * value
        return acc

    @property
    def value(self) -> float:
        return self.total.item()


LossFn = Callable[[Tensor, Tensor], Tensor]


def default_terms(extractor: PerceptualExtractor | None = None, mu: float = MU) -> dict[str, LossFn]:
    extractor = extractor or PerceptualExtractor.from_seed(0)
    return {
        "recon": lambda p, t: recon_loss(p, t, mu),
        "color": lambda p, t: color_loss(p, t, mu),
        "vgg": lambda p, t: perceptual_loss(p, t, extractor, mu),
        "tv": lambda p, t: tv_loss(p, mu),
    }


def total_loss(
    outputs: Mapping[str, Tensor],
    target,
    weights: LossWeights | None = None,
    terms: Mapping[str, LossFn] | None = None,
) -> LossReport:
    """Weighted sum of every term over the coarse, fine and final outputs.

    ``outputs`` maps "coarse"/"fine"/"final" to predictions. Terms with a zero
    weight are not evaluated, so they contribute nothing (not even NaN).
    """
    weights = weights or LossWeights()
    terms = terms if terms is not None else default_terms()
    target = as_tensor(target)
    report = LossReport(weights=weights)
    total = None
    for output in OUTPUTS:
        report.terms[output] = {}
        for term in TERMS:
            lam = weights.get(output, term)
            if lam == 0.0:
                continue
            value = terms[term](outputs[output], target)
            report.terms[output][term] = value.item()
            weighted = value * lam
            total = weighted if total is None else total + weighted
    report.total = total
    return report
