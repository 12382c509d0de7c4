"""Brute-force loop implementations used as oracles for the vectorized ops.

These run one output element at a time with plain Python loops and share no
code with :mod:`hdrba.ops`. Inputs are single samples (C, H, W); they are slow
and meant for small fixtures only.
"""

from __future__ import annotations

import math

import numpy as np

_GRID = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def conv2d_loop(x, w, b, stride=1, dilation=1, padding=0):
    c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    assert ci == c
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for y in range(ho):
            for xx in range(wo):
                acc = b[oc]
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            sy = y * stride + i * dilation - padding
                            sx = xx * stride + j * dilation - padding
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc += w[oc, ic, i, j] * x[ic, sy, sx]
                out[oc, y, xx] = acc
    return out


def bilinear_point(f, y, x):
    """Value of (C, H, W) map ``f`` at fractional (y, x); zero outside the lattice."""
    c, h, w = f.shape
    y0, x0 = math.floor(y), math.floor(x)
    ty, tx = y - y0, x - x0
    out = np.zeros(c)
    for yy, xx, weight in (
        (y0, x0, (1 - ty) * (1 - tx)),
        (y0, x0 + 1, (1 - ty) * tx),
        (y0 + 1, x0, ty * (1 - tx)),
        (y0 + 1, x0 + 1, ty * tx),
    ):
        if 0 <= yy < h and 0 <= xx < w:
            out += weight * f[:, yy, xx]
    return out


def deform_conv_loop(f, kernels, offsets):
    """f (C, H, W); kernels (9, H, W); offsets (18, H, W)."""
    c, h, w = f.shape
    out = np.zeros((c, h, w))
    for y in range(h):
        for x in range(w):
            acc = np.zeros(c)
            for n, (dy, dx) in enumerate(_GRID):
                sy = y + dy + offsets[2 * n, y, x]
                sx = x + dx + offsets[2 * n + 1, y, x]
                acc += kernels[n, y, x] * bilinear_point(f, sy, sx)
            out[:, y, x] = acc
    return out


def attention_loop(f, mask, temperature=10.0, patch=3, eps=1e-8):
    """Contextual attention by explicit loops over every (query, source) pair.

    f (C, H, W), mask (H, W). Returns (output, softmax scores, weighted scores).
    """
    c, h, w = f.shape
    r = patch // 2
    centres = [(y, x) for y in range(r, h - r) for x in range(r, w - r)]
    patches = [f[:, y - r : y + r + 1, x - r : x + r + 1].copy() for y, x in centres]
    norms = [math.sqrt(float(np.sum(p * p))) + eps for p in patches]
    count = len(centres)
    probs = np.zeros((count, count))
    weighted = np.zeros((count, count))
    for q in range(count):
        logits = []
        for s in range(count):
            cos = float(np.sum(patches[q] * patches[s])) / (norms[q] * norms[s])
            logits.append(temperature * cos)
        top = max(logits)
        e = [math.exp(v - top) for v in logits]
        z = sum(e)
        for s in range(count):
            probs[q, s] = e[s] / z
            weighted[q, s] = probs[q, s] * (1.0 - mask[centres[s]])
    acc = np.zeros((c, h, w))
    hits = np.zeros((h, w))
    for q, (y, x) in enumerate(centres):
        blend = np.zeros((c, patch, patch))
        for s in range(count):
            blend += weighted[q, s] * patches[s]
        acc[:, y - r : y + r + 1, x - r : x + r + 1] += blend
        hits[y - r : y + r + 1, x - r : x + r + 1] += 1
    return acc / hits, probs, weighted
