"""Neural-network operators on NCHW tensors.

Primitive ops (conv, bilinear sampling, patch unfold/fold, pooling) are
``Function`` subclasses with hand-written backward rules. The pixel-adaptive
deformable convolution and the contextual attention are compositions of
those primitives, so their gradients come from the tape.
"""

from __future__ import annotations

import warnings
from typing import Any

import numpy as np

from .autodiff import Function, Tensor, as_tensor, concat, l2norm, relu, softmax

__all__ = [
    "conv2d",
    "bilinear_sample",
    "pixel_adaptive_deformable_conv",
    "unfold",
    "fold",
    "avg_pool2d",
    "upsample_nearest",
    "attention_scores",
    "contextual_attention",
    "complete",
    "KERNEL_GRID",
    "DegenerateInputWarning",
]

# regular 3x3 sampling grid, row-major (dy, dx)
KERNEL_GRID = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


class DegenerateInputWarning(RuntimeWarning):
    """Every attention source is masked out; the hallucinated feature is zero."""


def _out_size(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


class Conv2d(Function):
    """Cross-correlation with zero padding; weights are (out, in, kh, kw)."""

    name = "conv2d"

    def forward(self, x, w, b, stride=1, dilation=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ValueError(f"conv2d expects NCHW input and OIHW weights, got {x.shape} and {w.shape}")
        n, c, h, wd = x.shape
        o, ci, kh, kw = w.shape
        if ci != c:
            raise ValueError(f"conv2d channel mismatch: input has {c}, weights expect {ci}")
        if b.shape != (o,):
            raise ValueError(f"conv2d bias shape {b.shape} != ({o},)")
        ho = _out_size(h, kh, stride, dilation, padding)
        wo = _out_size(wd, kw, stride, dilation, padding)
        if ho <= 0 or wo <= 0:
            raise ValueError(f"conv2d output would be empty for input {x.shape}")
        p = padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        xt = xp.transpose(1, 0, 2, 3)
        # columns laid out (C*kh*kw, N*Ho*Wo) so both passes are single GEMMs
        cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = xt[
                    :,
                    :,
                    i * dilation : i * dilation + stride * (ho - 1) + 1 : stride,
                    j * dilation : j * dilation + stride * (wo - 1) + 1 : stride,
                ]
        self.cols = cols.reshape(c * kh * kw, n * ho * wo)
        self.w2 = w.reshape(o, -1)
        self.geom = (x.shape, w.shape, stride, dilation, padding, ho, wo)
        out = self.w2 @ self.cols
        out += b[:, None]
        return out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(self, g):
        (n, c, h, wd), (o, _, kh, kw), stride, dilation, p, ho, wo = self.geom
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gx = gw = gb = None
        if self.needs_grad[1]:
            gw = (g2 @ self.cols.T).reshape(o, c, kh, kw)
        if self.needs_grad[2]:
            gb = g2.sum(axis=1)
        if self.needs_grad[0]:
            gcols = (self.w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n, h + 2 * p, wd + 2 * p), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :,
                        :,
                        i * dilation : i * dilation + stride * (ho - 1) + 1 : stride,
                        j * dilation : j * dilation + stride * (wo - 1) + 1 : stride,
                    ] += gcols[:, i, j]
            gx = gxp[:, :, p : p + h, p : p + wd].transpose(1, 0, 2, 3)
        return gx, gw, gb


def conv2d(x: Any, w: Any, b: Any = None, stride: int = 1, dilation: int = 1, padding: int = 0) -> Tensor:
    if b is None:
        b = np.zeros(as_tensor(w).shape[0])
    return Conv2d.apply(x, w, b, stride=stride, dilation=dilation, padding=padding)


class BilinearSample(Function):
    """Sample ``F`` (N, C, H, W) at fractional (row, col) positions.

    ``py`` and ``px`` share a shape (N, *S); the result is (N, C, *S).
    Lattice points outside the image read as zero.
    """

    name = "bilinear_sample"

    def forward(self, f, py, px):
        n, c, h, w = f.shape
        if py.shape != px.shape or py.shape[0] != n:
            raise ValueError(f"coordinate shapes {py.shape}, {px.shape} do not match batch {n}")
        self.sample_shape = py.shape[1:]
        y = py.reshape(n, -1)
        x = px.reshape(n, -1)
        y0 = np.floor(y)
        x0 = np.floor(x)
        wy = y - y0
        wx = x - x0
        y0 = y0.astype(np.int64)
        x0 = x0.astype(np.int64)
        flat = f.reshape(n, c, h * w)
        self.corners = []
        vals = []
        for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
            yy, xx = y0 + dy, x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1)
            v = np.take_along_axis(flat, idx[:, None, :], axis=2) * valid[:, None, :]
            self.corners.append((idx, valid))
            vals.append(v)
        v00, v01, v10, v11 = vals
        self.vals = vals
        self.wy, self.wx = wy, wx
        self.fshape = f.shape
        a, b = (1 - wy)[:, None], wy[:, None]
        l, r = (1 - wx)[:, None], wx[:, None]
        out = a * (l * v00 + r * v01) + b * (l * v10 + r * v11)
        return out.reshape((n, c) + self.sample_shape)

    def backward(self, g):
        n, c, h, w = self.fshape
        g = g.reshape(n, c, -1)
        wy, wx = self.wy, self.wx
        gf = gy = gx = None
        if self.needs_grad[0]:
            weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
            base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
            acc = np.zeros(n * c * h * w, dtype=g.dtype)
            for (idx, valid), wt in zip(self.corners, weights):
                contrib = g * (wt * valid)[:, None, :]
                acc += np.bincount((base + idx[:, None, :]).ravel(), weights=contrib.ravel(), minlength=acc.size)
            gf = acc.reshape(n, c, h, w)
        v00, v01, v10, v11 = self.vals
        if self.needs_grad[1]:
            dy = (1 - wx)[:, None] * (v10 - v00) + wx[:, None] * (v11 - v01)
            gy = (g * dy).sum(axis=1).reshape((n,) + self.sample_shape)
        if self.needs_grad[2]:
            dx = (1 - wy)[:, None] * (v01 - v00) + wy[:, None] * (v11 - v10)
            gx = (g * dx).sum(axis=1).reshape((n,) + self.sample_shape)
        return gf, gy, gx


def bilinear_sample(f: Any, py: Any, px: Any) -> Tensor:
    return BilinearSample.apply(f, py, px)


def pixel_adaptive_deformable_conv(f: Any, kernels: Any, offsets: Any) -> Tensor:
    """Per-pixel 3x3 deformable convolution with a channel-shared kernel.

    out[:, :, y, x] = sum_n K[:, n, y, x] * F(y + dy_n + off[:, 2n, y, x], x + dx_n + off[:, 2n+1, y, x])

    ``kernels`` is (N, 9, H, W) and ``offsets`` (N, 18, H, W) with (dy, dx)
    interleaved per tap; taps follow :data:`KERNEL_GRID`.
    """
    f, kernels, offsets = as_tensor(f), as_tensor(kernels), as_tensor(offsets)
    n, _, h, w = f.shape
    if kernels.shape != (n, 9, h, w):
        raise ValueError(f"kernel field shape {kernels.shape} != {(n, 9, h, w)}")
    if offsets.shape != (n, 18, h, w):
        raise ValueError(f"offset field shape {offsets.shape} != {(n, 18, h, w)}")
    gy, gx = np.mgrid[0:h, 0:w].astype(f.dtype)
    grid = np.asarray(KERNEL_GRID, dtype=f.dtype)
    base_y = gy[None] + grid[:, 0, None, None]  # (9, H, W)
    base_x = gx[None] + grid[:, 1, None, None]
    samples = bilinear_sample(f, offsets[:, 0::2] + base_y, offsets[:, 1::2] + base_x)  # (N, C, 9, H, W)
    return (samples * kernels.reshape(n, 1, 9, h, w)).sum(axis=2)


class Unfold(Function):
    """All valid k x k patches: (N, C, H, W) -> (N, L, C*k*k), row-major over positions."""

    name = "unfold"

    def forward(self, x, size=3):
        n, c, h, w = x.shape
        if h < size or w < size:
            raise ValueError(f"feature map {h}x{w} smaller than patch size {size}")
        self.shape, self.size = x.shape, size
        win = np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(2, 3))
        # win: (N, C, H', W', k, k) -> (N, H', W', C, k, k)
        return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, -1, c * size * size)

    def backward(self, g):
        return (_fold(g, self.shape, self.size),)


def _fold(patches: np.ndarray, shape: tuple[int, ...], size: int) -> np.ndarray:
    n, c, h, w = shape
    hp, wp = h - size + 1, w - size + 1
    p = patches.reshape(n, hp, wp, c, size, size)
    out = np.zeros(shape, dtype=patches.dtype)
    for i in range(size):
        for j in range(size):
            out[:, :, i : i + hp, j : j + wp] += p[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


class Fold(Function):
    """Adjoint of :class:`Unfold`: overlap-add patches back onto the map."""

    name = "fold"

    def forward(self, patches, shape, size=3):
        self.size = size
        self.shape = tuple(shape)
        return _fold(patches, self.shape, size)

    def backward(self, g):
        n, c, h, w = g.shape
        win = np.lib.stride_tricks.sliding_window_view(g, (self.size, self.size), axis=(2, 3))
        return (np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, -1, c * self.size**2),)


def unfold(x: Any, size: int = 3) -> Tensor:
    return Unfold.apply(x, size=size)


def fold(patches: Any, shape: tuple[int, ...], size: int = 3) -> Tensor:
    return Fold.apply(patches, shape=shape, size=size)


def coverage(h: int, w: int, size: int = 3) -> np.ndarray:
    """Number of valid ``size`` x ``size`` patches covering each pixel."""
    ones = np.ones((1, 1, h - size + 1, w - size + 1, size * size))
    return _fold(ones.reshape(1, -1, size * size), (1, 1, h, w), size)[0, 0]


class AvgPool2d(Function):
    name = "avg_pool2d"

    def forward(self, x, k=2):
        n, c, h, w = x.shape
        self.k, self.shape = k, x.shape
        ho, wo = h // k, w // k
        if ho == 0 or wo == 0:
            raise ValueError(f"cannot pool {h}x{w} by {k}")
        return x[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def backward(self, g):
        k = self.k
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        out = np.zeros(self.shape, dtype=g.dtype)
        out[:, :, : up.shape[2], : up.shape[3]] = up
        return (out,)


class UpsampleNearest(Function):
    name = "upsample_nearest"

    def forward(self, x, k=2):
        self.k = k
        return np.repeat(np.repeat(x, k, axis=2), k, axis=3)

    def backward(self, g):
        n, c, h, w = g.shape
        k = self.k
        return (g.reshape(n, c, h // k, k, w // k, k).sum(axis=(3, 5)),)


def avg_pool2d(x: Any, k: int = 2) -> Tensor:
    return AvgPool2d.apply(x, k=k)


def upsample_nearest(x: Any, k: int = 2) -> Tensor:
    return UpsampleNearest.apply(x, k=k)


def attention_scores(query: Any, source: Any, valid: Any, temperature: float = 10.0, eps: float = 1e-8):
    """Cosine-similarity attention between patch sets.

    ``query`` is (N, Lq, D), ``source`` (N, Ls, D), ``valid`` (N, 1, Ls) holds
    the well-exposedness 1 - M of each source. Returns the softmax over
    sources and the same scores multiplied by ``valid``.
    """
    query, source = as_tensor(query), as_tensor(source)
    qn = query / (l2norm(query, axis=-1) + eps)
    sn = source / (l2norm(source, axis=-1) + eps)
    sim = qn @ sn.transpose(0, 2, 1)
    probs = softmax(sim * temperature, axis=-1)
    return probs, probs * valid


def contextual_attention(
    f: Any,
    mask: Any,
    temperature: float = 10.0,
    patch: int = 3,
    eps: float = 1e-8,
    return_scores: bool = False,
):
    """Fill each location with well-exposed patches that look like it.

    Every valid ``patch`` x ``patch`` window of ``f`` (N, C, H, W) is both a
    query and a source. Scores are a softmax over cosine similarities scaled
    by ``temperature``, then multiplied by ``1 - mask`` at the source centre.
    Source patches are recombined with these scores and overlap-added, with
    each pixel divided by the number of patches covering it.

    ``mask`` is (N, 1, H', W'); if H' != H it is area-averaged down by the
    integer factor H' // H.
    """
    f, mask = as_tensor(f), as_tensor(mask)
    n, c, h, w = f.shape
    if mask.shape[-2:] != (h, w):
        k = mask.shape[-2] // h
        if k < 1 or mask.shape[-2] // k != h or mask.shape[-1] // k != w:
            raise ValueError(f"mask {mask.shape} does not reduce to feature size {(h, w)}")
        mask = avg_pool2d(mask, k)
    if mask.shape != (n, 1, h, w):
        raise ValueError(f"mask shape {mask.shape} != {(n, 1, h, w)}")
    r = patch // 2
    valid = (1.0 - mask[:, :, r : h - r, r : w - r]).reshape(n, 1, -1)
    if np.any(valid.data.sum(axis=-1) < 1e-6):
        warnings.warn("all attention sources are saturated; hallucinated feature is zero", DegenerateInputWarning)
    patches = unfold(f, patch)
    probs, weights = attention_scores(patches, patches, valid, temperature, eps)
    out = fold(weights @ patches, f.shape, patch) / coverage(h, w, patch)
    if return_scores:
        return out, probs, weights
    return out


def complete(coarse: Any, fine: Any, mask: Any) -> Tensor:
    """Blend ``(1 - M) * coarse + M * fine``; ``mask`` broadcasts over channels."""
    mask = as_tensor(mask)
    return (1.0 - mask) * coarse + mask * fine


def residual(x: Tensor, w1, b1, w2, b2, dilation: int = 1) -> Tensor:
    """``x + conv(relu(conv(x)))`` with 3x3 same-padding convolutions."""
    y = conv2d(relu(conv2d(x, w1, b1, dilation=dilation, padding=dilation)), w2, b2, dilation=dilation, padding=dilation)
    return x + y


def channel_concat(tensors) -> Tensor:
    return concat(tensors, axis=1)
