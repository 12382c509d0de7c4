"""Readers and writers for binary PPM (P6) and PFM images.

LDR images are H x W x 3 float arrays in [0, 1] decoded as ``byte / 255``.
HDR images are H x W x 3 (or H x W for greyscale ``Pf``) float32 payloads.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .radiometry import MU, mu_law

__all__ = [
    "ImageFormatError",
    "read_ppm",
    "write_ppm",
    "read_pfm",
    "write_pfm",
    "write_preview",
    "quantize8",
]


class ImageFormatError(ValueError):
    """Malformed image file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


_TOKEN = re.compile(rb"\S+")


def _header_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the first payload byte (one
    whitespace byte after the last token).
    """
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageFormatError("truncated header", pos)
        if raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        m = _TOKEN.match(raw, pos)
        tokens.append(m.group())
        pos = m.end()
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header", pos)
    return tokens, pos + 1


def quantize8(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to bytes with ``round(255 * clamp(v, 0, 1))``."""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P6":
        raise ImageFormatError(f"bad magic {raw[:2]!r}, expected b'P6'", 0)
    tokens, start = _header_tokens(raw, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"non-integer header field: {exc}", 2) from None
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported, expected 255", start - 1)
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid size {width}x{height}", 2)
    need = width * height * 3
    if len(raw) - start < need:
        raise ImageFormatError(f"truncated payload: {len(raw) - start} of {need} bytes", len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=start)
    return data.reshape(height, width, 3).astype(np.float64) / 255.0


def write_ppm(image: np.ndarray, path: str | os.PathLike) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs an H x W x 3 image, got shape {image.shape}")
    payload = image if image.dtype == np.uint8 else quantize8(image)
    h, w, _ = payload.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Read a PFM file into a top-to-bottom float32 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise ImageFormatError(f"bad magic {magic!r}, expected b'PF' or b'Pf'", 0)
    tokens, start = _header_tokens(raw, 4)
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise ImageFormatError(f"bad header field: {exc}", 2) from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid size {width}x{height}", 2)
    if scale == 0:
        raise ImageFormatError("scale must be non-zero", start - 1)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    if len(raw) - start < count * 4:
        raise ImageFormatError(f"truncated payload: {len(raw) - start} of {count * 4} bytes", len(raw))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=start).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].copy()


def write_pfm(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write a float image as little-endian PFM (rows bottom-to-top)."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 3:
        magic = b"PF"
    elif image.ndim == 2:
        magic = b"Pf"
    else:
        raise ValueError(f"PFM needs H x W x 3 or H x W, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("refusing to write non-finite values to PFM")
    payload = np.ascontiguousarray(image[::-1], dtype="<f4")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(payload.tobytes())


def write_preview(hdr: np.ndarray, path: str | os.PathLike, mu: float = MU) -> None:
    """Tonemap with the mu-law and save an 8-bit PPM (or PNG via Pillow)."""
    tonemapped = mu_law(np.clip(hdr, 0.0, None), mu)
    if str(path).lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(quantize8(tonemapped)).save(path)
    else:
        write_ppm(quantize8(tonemapped), path)
