"""Brightness-adjustment networks and the merge-and-hallucination network.

The pipeline maps three 6-channel exposures (NCHW) to coarse, fine and final
HDR predictions plus a saturation mask. Parameters live in a flat ordered
dict of leaf tensors so the trainer and the checkpoint code can walk them.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from typing import Any

import numpy as np

from . import checkpoint
from .autodiff import Tensor, as_tensor, clamp_min, concat, relu, sigmoid
from .ops import (
    complete,
    contextual_attention,
    conv2d,
    pixel_adaptive_deformable_conv,
    upsample_nearest,
)

EXPOSURES = ("under", "middle", "over")
MASK_INIT_SCALE = 0.1


@dataclass(frozen=True)
class NetConfig:
    width: int = 32
    levels: int = 3
    res_blocks: int = 3
    refine_dilations: tuple[int, ...] = (1, 2, 4)
    attention_downscale: int = 2  # number of stride-2 convs ahead of the attention
    temperature: float = 10.0
    mask_softness: float = 3.0
    mode: str = "brightness"  # or "motion"
    attention: str = "soft"  # or "hard"
    tau: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("brightness", "motion"):
            raise ValueError(f"mode must be 'brightness' or 'motion', got {self.mode!r}")
        if self.attention not in ("soft", "hard"):
            raise ValueError(f"attention must be 'soft' or 'hard', got {self.attention!r}")
        if self.width < 1 or self.levels < 1 or self.res_blocks < 0:
            raise ValueError("width and levels must be positive, res_blocks non-negative")

    def to_meta(self) -> dict[str, str]:
        out = {}
        for key, value in asdict(self).items():
            out[f"net.{key}"] = ",".join(map(str, value)) if isinstance(value, tuple) else str(value)
        return out

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "NetConfig":
        kwargs: dict[str, Any] = {}
        for f in fields(cls):
            raw = meta.get(f"net.{f.name}")
            if raw is None:
                continue
            default = getattr(cls, f.name)
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(int(v) for v in raw.split(",") if v)
            elif isinstance(default, bool):
                kwargs[f.name] = raw == "True"
            else:
                kwargs[f.name] = type(default)(raw)
        return cls(**kwargs)


@dataclass
class PipelineOutputs:
    coarse: Tensor
    fine: Tensor
    final: Tensor
    mask: Tensor
    mask_logits: Tensor | None
    adjusted: list[Tensor]

    def as_dict(self) -> dict[str, Tensor]:
        return {"coarse": self.coarse, "fine": self.fine, "final": self.final}


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes for a configuration."""
    c = cfg.width
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name: str, cin: int, cout: int, k: int = 3) -> None:
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    for ban in EXPOSURES:
        p = f"ban_{ban}"
        for level in range(1, cfg.levels + 1):
            conv(f"{p}.ref{level}", 6 if level == 1 else c, c)
        for level in range(1, cfg.levels + 1):
            conv(f"{p}.sup{level}", 6 if level == 1 else 2 * c, c)
        conv(f"{p}.fuse", 2 * c, c)
        conv(f"{p}.kernel1", c, c)
        conv(f"{p}.kernel2", c, 9)
        conv(f"{p}.offset1", c, c)
        conv(f"{p}.offset2", c, 18)

    wide = 2 * c
    conv("mahn.merge", 3 * c, wide, k=1)
    for i in range(1, cfg.res_blocks + 1):
        conv(f"mahn.res{i}.conv1", wide, wide)
        conv(f"mahn.res{i}.conv2", wide, wide)
    conv("mahn.coarse_out", wide, 3)
    conv("mahn.mask", wide, 1)
    cin = wide + 1
    for i, _ in enumerate(cfg.refine_dilations, start=1):
        conv(f"mahn.refine{i}", cin, c)
        cin = c
    conv("mahn.hall_in", wide + 1, c)
    for i in range(1, cfg.attention_downscale + 1):
        conv(f"mahn.hall_down{i}", c, c)
    conv("mahn.hall_out", c, c)
    conv("mahn.fuse", 2 * c, c)
    conv("mahn.fine_out", c, 3)
    return shapes


def init_params(cfg: NetConfig) -> dict[str, Tensor]:
    """He fan-in init for conv weights, zero biases, zero offset heads.

    The mask head starts at a tenth of the He scale so the sigmoid begins
    unsaturated.
    """
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias") or ".offset2." in name:
            data = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            if name.startswith("mahn.mask."):
                data *= MASK_INIT_SCALE
        params[name] = Tensor(data, requires_grad=True)
    return params


def count_params(cfg: NetConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


class HDRNet:
    """Three BANs feeding a MAHN: ``(X_-1, X_0, X_1) -> PipelineOutputs``."""

    def __init__(self, cfg: NetConfig | None = None, params: dict[str, Tensor] | None = None):
        self.cfg = cfg or NetConfig()
        self.params = params if params is not None else init_params(self.cfg)

    # -- building blocks ------------------------------------------------
    def _conv(self, name, x, **kw) -> Tensor:
        return conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], **kw)

    def _conv3(self, name, x, dilation: int = 1, stride: int = 1) -> Tensor:
        return self._conv(name, x, padding=dilation, dilation=dilation, stride=stride)

    def reference_branch(self, ban: str, x) -> list[Tensor]:
        feats, h = [], as_tensor(x)
        for level in range(1, self.cfg.levels + 1):
            h = relu(self._conv3(f"ban_{ban}.ref{level}", h))
            feats.append(h)
        return feats

    def ban_feature_extract(self, ban: str, x_ref, x_sup) -> tuple[Tensor, Tensor, list[Tensor]]:
        """Two-branch extractor; reference features enter the supporting branch level by level.

        Returns the last reference feature, the fused feature used by the
        kernel/offset heads, and the per-level supporting-branch features.
        """
        if as_tensor(x_ref).shape != as_tensor(x_sup).shape:
            raise ValueError(f"reference {as_tensor(x_ref).shape} and supporting {as_tensor(x_sup).shape} differ")
        ref = self.reference_branch(ban, x_ref)
        h = relu(self._conv3(f"ban_{ban}.sup1", x_sup))
        levels = [h]
        for level in range(2, self.cfg.levels + 1):
            h = relu(self._conv3(f"ban_{ban}.sup{level}", concat([h, ref[level - 2]], axis=1)))
            levels.append(h)
        fused = relu(self._conv3(f"ban_{ban}.fuse", concat([h, ref[-1]], axis=1)))
        return ref[-1], fused, levels

    def predict_field(self, ban: str, fused: Tensor) -> tuple[Tensor, Tensor]:
        p = f"ban_{ban}"
        kernels = self._conv3(f"{p}.kernel2", relu(self._conv3(f"{p}.kernel1", fused)))
        offsets = self._conv3(f"{p}.offset2", relu(self._conv3(f"{p}.offset1", fused)))
        return kernels, offsets

    def ban_forward(self, ban: str, x_ref, x_sup, mode: str | None = None) -> Tensor:
        """Adjusted feature for one exposure.

        In brightness mode the deformable conv filters the reference feature
        and the supporting image only shapes the kernels and offsets. In
        motion mode the same conv filters the supporting image's feature
        (same extractor weights) instead.
        """
        mode = mode or self.cfg.mode
        f_ref, fused, _ = self.ban_feature_extract(ban, x_ref, x_sup)
        kernels, offsets = self.predict_field(ban, fused)
        content = f_ref if mode == "brightness" else self.reference_branch(ban, x_sup)[-1]
        return pixel_adaptive_deformable_conv(content, kernels, offsets)

    def mask_from_logits(self, logits: Tensor) -> Tensor:
        return sigmoid(logits * self.cfg.mask_softness)

    def hard_mask(self, coarse: Tensor) -> Tensor:
        return Tensor((coarse.data.max(axis=1, keepdims=True) >= self.cfg.tau).astype(np.float64))

    def mahn_forward(self, adjusted: list[Tensor]) -> PipelineOutputs:
        cfg = self.cfg
        h = self._conv("mahn.merge", concat(adjusted, axis=1))
        for i in range(1, cfg.res_blocks + 1):
            y = self._conv3(f"mahn.res{i}.conv2", relu(self._conv3(f"mahn.res{i}.conv1", h)))
            h = h + y
        coarse_feat = h
        coarse = clamp_min(self._conv3("mahn.coarse_out", coarse_feat), 0.0)
        if cfg.attention == "soft":
            logits = self._conv3("mahn.mask", coarse_feat)
            mask = self.mask_from_logits(logits)
        else:
            logits = None
            mask = self.hard_mask(coarse)

        fine_in = concat([coarse_feat, mask], axis=1)
        r = fine_in
        for i, d in enumerate(cfg.refine_dilations, start=1):
            r = relu(self._conv3(f"mahn.refine{i}", r, dilation=d))

        g = relu(self._conv3("mahn.hall_in", fine_in))
        for i in range(1, cfg.attention_downscale + 1):
            g = relu(self._conv3(f"mahn.hall_down{i}", g, stride=2))
        g = contextual_attention(g, mask, temperature=cfg.temperature)
        if cfg.attention_downscale:
            g = upsample_nearest(g, 2**cfg.attention_downscale)
        g = relu(self._conv3("mahn.hall_out", g))

        f = relu(self._conv3("mahn.fuse", concat([r, g], axis=1)))
        fine = clamp_min(self._conv3("mahn.fine_out", f), 0.0)
        final = complete(coarse, fine, mask)
        return PipelineOutputs(coarse, fine, final, mask, logits, adjusted)

    def forward(self, x_under, x_mid, x_over) -> PipelineOutputs:
        x_under, x_mid, x_over = (as_tensor(x) for x in (x_under, x_mid, x_over))
        if not (x_under.shape == x_mid.shape == x_over.shape):
            raise ValueError("all three inputs must share a shape")
        n, ch, h, w = x_mid.shape
        if ch != 6:
            raise ValueError(f"inputs must have 6 channels, got {ch}")
        factor = 2**self.cfg.attention_downscale
        if h % factor or w % factor or h // factor < 3 or w // factor < 3:
            raise ValueError(f"spatial size {h}x{w} must be a multiple of {factor} and at least {3 * factor}")
        adjusted = [
            self.ban_forward("under", x_mid, x_under),
            self.ban_forward("middle", x_mid, x_mid),
            self.ban_forward("over", x_mid, x_over),
        ]
        return self.mahn_forward(adjusted)

    __call__ = forward

    # -- persistence ------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        shapes = param_shapes(self.cfg)
        for name, shape in shapes.items():
            if name not in arrays or tuple(arrays[name].shape) != shape:
                raise checkpoint.CheckpointError(f"bad or missing entry {name!r}")
        self.params = {k: Tensor(np.array(arrays[k], dtype=np.float64), requires_grad=True) for k in shapes}

    def save(self, path: str | os.PathLike, meta: dict[str, object] | None = None) -> None:
        checkpoint.save(path, self.state_dict(), meta={**self.cfg.to_meta(), **(meta or {})})

    @classmethod
    def load(cls, path: str | os.PathLike) -> "HDRNet":
        with open(path, "rb") as fh:
            raw = fh.read()
        _, meta = checkpoint.loads(raw)
        cfg = NetConfig.from_meta(meta)
        arrays, _ = checkpoint.loads(raw, expected=param_shapes(cfg))
        net = cls(cfg, params={})
        net.load_state_dict(arrays)
        return net


def images_to_batch(stack) -> np.ndarray:
    """H x W x C images (or a list of them) -> N x C x H x W."""
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def batch_to_images(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(batch).transpose(0, 2, 3, 1))
