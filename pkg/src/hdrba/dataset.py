"""Exposure-stack scenes: loading, synthesis, patch sampling and batching.

A scene directory holds ``ldr_0.ppm``, ``ldr_1.ppm``, ``ldr_2.ppm`` (short to
long exposure), ``exposures.txt`` with one number per line, and ``gt.pfm``
aligned to the middle exposure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import quantize8, read_pfm, read_ppm, write_pfm, write_ppm
from .radiometry import GAMMA, build_input, synth_static_ldr

DEFAULT_EXPOSURES = (0.25, 1.0, 4.0)


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    ldrs: np.ndarray  # (3, H, W, 3) in [0, 1]
    exposures: tuple[float, float, float]
    gt: np.ndarray  # (H, W, 3) linear radiance, aligned to ldrs[1]
    name: str = ""

    def __post_init__(self):
        self.ldrs = np.asarray(self.ldrs, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        self.exposures = tuple(float(t) for t in self.exposures)
        if self.ldrs.ndim != 4 or self.ldrs.shape[0] != 3 or self.ldrs.shape[-1] != 3:
            raise SceneError(f"expected three H x W x 3 exposures, got {self.ldrs.shape}")
        if self.gt.shape != self.ldrs.shape[1:]:
            raise SceneError(f"ground truth {self.gt.shape} does not match exposures {self.ldrs.shape[1:]}")
        if len(self.exposures) != 3:
            raise SceneError(f"need three exposure times, got {len(self.exposures)}")
        t0, t1, t2 = self.exposures
        if not (0 < t0 < t1 < t2):
            raise SceneError(f"exposure times must be positive and increasing, got {self.exposures}")

    @property
    def size(self) -> tuple[int, int]:
        return self.gt.shape[0], self.gt.shape[1]

    def inputs(self, gamma: float = GAMMA) -> np.ndarray:
        """Six-channel inputs, shape (3, H, W, 6)."""
        return np.stack([build_input(ldr, t, gamma) for ldr, t in zip(self.ldrs, self.exposures)])


def _parse_exposures(path: Path, mode: str) -> tuple[float, ...]:
    try:
        values = [float(tok) for tok in path.read_text().split()]
    except ValueError as exc:
        raise SceneError(f"{path}: {exc}") from None
    if len(values) != 3:
        raise SceneError(f"{path}: expected 3 values, found {len(values)}")
    if mode == "bias":
        values = [2.0**v for v in values]
    elif mode != "time":
        raise SceneError(f"unknown exposure mode {mode!r}")
    if not all(b > a for a, b in zip(values, values[1:])):
        raise SceneError(f"{path}: exposures must be strictly increasing, got {values}")
    return tuple(values)


def load_scene(directory: str | os.PathLike, exposure_mode: str = "time") -> Scene:
    root = Path(directory)
    names = ["ldr_0.ppm", "ldr_1.ppm", "ldr_2.ppm", "exposures.txt", "gt.pfm"]
    for name in names:
        if not (root / name).is_file():
            raise SceneError(f"{root}: missing {name}")
    ldrs = [read_ppm(root / f"ldr_{i}.ppm") for i in range(3)]
    gt = read_pfm(root / "gt.pfm")
    for i, ldr in enumerate(ldrs):
        if ldr.shape != gt.shape:
            raise SceneError(f"{root}: ldr_{i}.ppm is {ldr.shape[:2]}, gt.pfm is {gt.shape[:2]}")
    exposures = _parse_exposures(root / "exposures.txt", exposure_mode)
    return Scene(np.stack(ldrs), exposures, gt.astype(np.float64), name=root.name)


def save_scene(scene: Scene, directory: str | os.PathLike) -> None:
    """Write a scene in the directory layout (LDRs are quantized to 8 bits)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for i, ldr in enumerate(scene.ldrs):
        write_ppm(ldr, root / f"ldr_{i}.ppm")
    (root / "exposures.txt").write_text("".join(f"{t!r}\n" for t in scene.exposures))
    write_pfm(scene.gt.astype(np.float32), root / "gt.pfm")


def quantize_scene(scene: Scene) -> Scene:
    """Round LDRs to 8-bit levels and the ground truth to float32."""
    ldrs = quantize8(scene.ldrs).astype(np.float64) / 255.0
    return Scene(ldrs, scene.exposures, scene.gt.astype(np.float32).astype(np.float64), scene.name)


def make_static_scene(hdr: np.ndarray, exposures: Sequence[float] = DEFAULT_EXPOSURES,
                      gamma: float = GAMMA, name: str = "") -> Scene:
    """Motion-free stack re-exposed from a linear image."""
    ldrs = np.stack([synth_static_ldr(hdr, t, gamma) for t in exposures])
    return Scene(ldrs, tuple(exposures), np.asarray(hdr, dtype=np.float64), name=name)


def _smooth_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    return gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")


def synth_radiance(rng: np.random.Generator, h: int, w: int, decades: float = 2.5) -> np.ndarray:
    """Smooth random background spanning ``decades`` orders of magnitude, peak 1."""
    field_ = _smooth_field(rng, h, w, max(h, w) / 6.0)
    # rank-uniformize so the brightest quarter reliably saturates long exposures
    ranks = np.empty(field_.size)
    ranks[np.argsort(field_, axis=None, kind="stable")] = np.arange(field_.size)
    u = ((ranks + 0.5) / field_.size).reshape(h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    freq = rng.uniform(0.15, 0.45, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    texture = 0.15 * np.sin(freq[0] * yy + freq[1] * xx + phase)
    log_lum = -decades * (1.0 - u) + texture
    tint = 1.0 + 0.25 * np.stack([_smooth_field(rng, h, w, max(h, w) / 4.0) for _ in range(3)], axis=-1)
    hdr = (10.0**log_lum)[..., None] * np.clip(tint, 0.5, 1.5)
    return hdr / hdr.max()


def _sprite(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Textured disc: (alpha mask, radiance patch)."""
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    alpha = (yy**2 + xx**2 <= (size / 2.0) ** 2).astype(np.float64)
    level = 10.0 ** rng.uniform(-1.8, -0.5)
    color = rng.uniform(0.4, 1.0, size=3)
    checker = ((np.floor(yy / 2) + np.floor(xx / 2)) % 2) * 0.6 + 0.4
    return alpha, level * checker[..., None] * color


def synth_dynamic_scene(seed: int, size: int | tuple[int, int] = 64, motion_px: int = 4,
                        exposures: Sequence[float] = DEFAULT_EXPOSURES, gamma: float = GAMMA) -> Scene:
    """Procedural HDR background plus a sprite that moves between exposures.

    The sprite sits at its base position in the middle frame (the ground
    truth) and is shifted by -/+ ``motion_px`` pixels along a random direction
    in the short/long exposures.
    """
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    background = synth_radiance(rng, h, w)
    sprite_size = max(3, min(h, w) // 4)
    alpha, radiance = _sprite(rng, sprite_size)
    cy = int(rng.integers(0, h - sprite_size + 1))
    cx = int(rng.integers(0, w - sprite_size + 1))
    angle = rng.uniform(0, 2 * np.pi)
    step = np.array([np.sin(angle), np.cos(angle)])

    frames = []
    for k in (-1, 0, 1):
        dy, dx = np.round(k * motion_px * step).astype(int)
        frame = background.copy()
        y0, x0 = cy + dy, cx + dx
        ys = slice(max(y0, 0), min(y0 + sprite_size, h))
        xs = slice(max(x0, 0), min(x0 + sprite_size, w))
        a = alpha[ys.start - y0 : ys.stop - y0, xs.start - x0 : xs.stop - x0, None]
        r = radiance[ys.start - y0 : ys.stop - y0, xs.start - x0 : xs.stop - x0]
        frame[ys, xs] = (1 - a) * frame[ys, xs] + a * r
        frames.append(frame)
    ldrs = np.stack([synth_static_ldr(f, t, gamma) for f, t in zip(frames, exposures)])
    return Scene(ldrs, tuple(exposures), frames[1], name=f"synth_{seed:04d}")


# -- patches and batches -------------------------------------------------


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """Element ``k`` of the 8-element dihedral group on the first two axes.

    k in 0..3 rotates by k * 90 degrees; k in 4..7 flips left-right first.
    """
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in [0, 8), got {k}")
    if k >= 4:
        img = img[:, ::-1]
    return np.ascontiguousarray(np.rot90(img, k % 4, axes=(0, 1)))


def dihedral_inverse(k: int) -> int:
    # reflections are involutions; rotations invert to the opposite angle
    return k if k >= 4 else (-k) % 4


@dataclass
class Sample:
    ldrs: np.ndarray  # (3, s, s, 3)
    exposures: tuple[float, float, float]
    gt: np.ndarray  # (s, s, 3)
    is_static: bool = False
    aug: int = 0
    origin: tuple[int, int] = (0, 0)

    def inputs(self, gamma: float = GAMMA) -> np.ndarray:
        return np.stack([build_input(ldr, t, gamma) for ldr, t in zip(self.ldrs, self.exposures)])


def sample_patches(scene: Scene, n: int, size: int = 128, seed: int = 0, is_static: bool = False) -> list[Sample]:
    """``n`` uniformly placed crops, each with one random dihedral transform."""
    h, w = scene.size
    if h < size or w < size:
        raise SceneError(f"scene {h}x{w} is smaller than patch size {size}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        k = int(rng.integers(0, 8))
        crop = (slice(y, y + size), slice(x, x + size))
        ldrs = np.stack([dihedral(ldr[crop], k) for ldr in scene.ldrs])
        out.append(Sample(ldrs, scene.exposures, dihedral(scene.gt[crop], k), is_static, k, (y, x)))
    return out


def sample_seed(seed: int, index: int) -> int:
    """Per-sample seed derived from (seed, index) independent of draw order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class Batch:
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def counts(self) -> tuple[int, int]:
        static = sum(s.is_static for s in self.samples)
        return len(self.samples) - static, static

    def arrays(self, gamma: float = GAMMA) -> tuple[list[np.ndarray], np.ndarray]:
        """Network-ready NCHW arrays: ([X_-1, X_0, X_1], H_gt)."""
        inputs = np.stack([s.inputs(gamma) for s in self.samples])  # (N, 3, s, s, 6)
        xs = [np.ascontiguousarray(inputs[:, i].transpose(0, 3, 1, 2)) for i in range(3)]
        gt = np.ascontiguousarray(np.stack([s.gt for s in self.samples]).transpose(0, 3, 1, 2))
        return xs, gt


def make_batch(dynamic_pool: Sequence[Scene], static_pool: Sequence[Scene], batch: int = 16,
               seed: int = 0, size: int = 128) -> Batch:
    """Batch with dynamic and static samples in a 3:1 ratio, deterministically shuffled."""
    if batch <= 0 or batch % 4:
        raise ValueError(f"batch size must be a positive multiple of 4, got {batch}")
    if not dynamic_pool or not static_pool:
        raise ValueError("both the dynamic and the static pool need at least one scene")
    n_static = batch // 4
    samples = []
    for index in range(batch):
        is_static = index >= batch - n_static
        pool = static_pool if is_static else dynamic_pool
        rng = np.random.default_rng(sample_seed(seed, index))
        scene = pool[int(rng.integers(0, len(pool)))]
        samples.extend(sample_patches(scene, 1, size, seed=int(rng.integers(0, 2**63 - 1)), is_static=is_static))
    order = np.random.default_rng(seed).permutation(batch)
    return Batch([samples[i] for i in order])
