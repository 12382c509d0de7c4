"""Adam training loop for the full pipeline."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff
from .autodiff import Tensor, backward, no_grad
from .dataset import Scene, make_batch, make_static_scene, sample_seed
from .losses import OUTPUTS, LossWeights, PerceptualExtractor, default_terms, total_loss
from .metrics import evaluate
from .networks import HDRNet, NetConfig, images_to_batch
from .radiometry import GAMMA, MU

log = logging.getLogger(__name__)

CURVE_HEADER = ["iter", "loss_total", "loss_coarse", "loss_fine", "loss_final"]


class ConfigError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, iteration: int | None = None, checkpoint: str | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint


def _parse_weights(raw: str) -> tuple[float, float, float, float]:
    vals = tuple(float(v) for v in raw.split(","))
    if len(vals) != 4:
        raise ConfigError(f"loss weights need 4 comma-separated values, got {raw!r}")
    return vals


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    patch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 2000
    seed: int = 0
    precision: str = "float64"
    checkpoint_every: int = 500
    grad_clip: float = 0.0  # global-norm clip; 0 disables
    gamma: float = GAMMA
    mu: float = MU
    perceptual_seed: int = 0
    # network
    width: int = 32
    levels: int = 3
    res_blocks: int = 3
    attention_downscale: int = 2
    temperature: float = 10.0
    mask_softness: float = 3.0
    mode: str = "brightness"
    attention: str = "soft"
    tau: float = 0.9
    # per-output (recon, color, vgg, tv)
    weights_coarse: tuple[float, float, float, float] = (1.0, 1.0, 0.001, 0.1)
    weights_fine: tuple[float, float, float, float] = (1.0, 1.0, 0.001, 0.1)
    weights_final: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size <= 0 or self.batch_size % 4:
            raise ConfigError(f"batch_size must be a positive multiple of 4, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")

    def net_config(self) -> NetConfig:
        return NetConfig(
            width=self.width,
            levels=self.levels,
            res_blocks=self.res_blocks,
            attention_downscale=self.attention_downscale,
            temperature=self.temperature,
            mask_softness=self.mask_softness,
            mode=self.mode,
            attention=self.attention,
            tau=self.tau,
            seed=self.seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.weights_coarse, self.weights_fine, self.weights_final)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            default = getattr(cls, key)
            try:
                if isinstance(default, tuple):
                    kwargs[key] = _parse_weights(value)
                else:
                    kwargs[key] = type(default)(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place. Parameters without a grad see g = 0."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class TrainResult:
    net: HDRNet
    curve: list[dict[str, float]]
    state: AdamState

    def losses(self) -> np.ndarray:
        return np.array([row["loss_total"] for row in self.curve])


def write_curve(rows: Sequence[dict[str, float]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (row[k] if k == "iter" else repr(float(row[k]))) for k in CURVE_HEADER})


def train(
    config: TrainConfig,
    scenes: Sequence[Scene],
    out_dir: str | os.PathLike | None = None,
    callback: Callable[[int, dict[str, float]], None] | None = None,
) -> TrainResult:
    """Run ``config.iterations`` Adam steps on batches drawn from ``scenes``.

    Each dynamic scene also contributes a static stack re-exposed from its
    ground truth. With ``out_dir`` set, ``model.ckpt`` is written every
    ``checkpoint_every`` iterations and at the end, with ``loss.csv``
    alongside.
    """
    if not scenes:
        raise ValueError("no training scenes")
    autodiff.set_precision(config.precision)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt_path = str(out / "model.ckpt") if out is not None else None

    net = HDRNet(config.net_config())
    static_pool = [make_static_scene(s.gt, s.exposures, config.gamma, name=f"{s.name}_static") for s in scenes]
    terms = default_terms(PerceptualExtractor.from_seed(config.perceptual_seed), config.mu)
    weights = config.loss_weights()
    state = AdamState()
    curve: list[dict[str, float]] = []
    meta = {"iterations_done": 0}
    if out is not None:
        net.save(ckpt_path, meta=meta)

    for it in range(1, config.iterations + 1):
        batch = make_batch(scenes, static_pool, config.batch_size, seed=sample_seed(config.seed, it),
                           size=config.patch_size)
        xs, gt = batch.arrays(config.gamma)
        outputs = net(*xs)
        report = total_loss(outputs.as_dict(), gt, weights, terms)
        loss = report.value
        if not math.isfinite(loss):
            if out is not None:
                write_curve(curve, out / "loss.csv")
            raise NonFiniteError(f"non-finite loss at iteration {it}", iteration=it, checkpoint=ckpt_path)
        for p in net.params.values():
            p.grad = None
        backward(report.total)
        if config.grad_clip > 0:
            clip_grad_norm(net.params, config.grad_clip)
        adam_step(net.params, state, config.lr, config.beta1, config.beta2, config.eps)

        row = {"iter": it, "loss_total": loss}
        for name in OUTPUTS:
            row[f"loss_{name}"] = report.per_output(name)
        curve.append(row)
        if callback is not None:
            callback(it, row)
        if out is not None and (it % config.checkpoint_every == 0 or it == config.iterations):
            net.save(ckpt_path, meta={"iterations_done": it})
        if it % 100 == 0:
            log.info("iter %d loss %.6f", it, loss)

    if out is not None:
        write_curve(curve, out / "loss.csv")
    return TrainResult(net, curve, state)


def infer(net: HDRNet, scene: Scene, gamma: float = GAMMA) -> dict[str, np.ndarray]:
    """Run the pipeline on a whole scene; returns H x W x C arrays.

    Scenes whose size is not a multiple of the attention stride are
    edge-padded for the forward pass and cropped back afterwards.
    """
    inputs = scene.inputs(gamma)
    h, w = scene.size
    factor = 2**net.cfg.attention_downscale
    ph = max(-(-h // factor) * factor, 3 * factor) - h
    pw = max(-(-w // factor) * factor, 3 * factor) - w
    if ph or pw:
        inputs = np.pad(inputs, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    with no_grad():
        out = net(*(images_to_batch(x) for x in inputs))
    as_image = lambda t: np.ascontiguousarray(t.data[0, :, :h, :w].transpose(1, 2, 0))  # noqa: E731
    return {
        "hdr": as_image(out.final),
        "coarse": as_image(out.coarse),
        "fine": as_image(out.fine),
        "mask": as_image(out.mask)[..., 0],
    }


def evaluate_scenes(net: HDRNet, scenes: Sequence[Scene], gamma: float = GAMMA, mu: float = MU) -> dict[str, float]:
    """Metrics averaged over scenes (PSNR averaged in dB)."""
    rows = [evaluate(infer(net, s, gamma)["hdr"], s.gt, mu) for s in scenes]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
