"""Image gradients, SSIM, and PFM / PPM file I/O."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class ImageFormatError(ValueError):
    """Malformed or unsupported image / float-map file."""


def _tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    while arr.ndim < 4:
        arr = arr[None]
    return Tensor(arr)


def image_gradients(x) -> tuple[Tensor, Tensor]:
    """Forward differences (d/dx, d/dy); last column / row are zero."""
    x = _tensor(x)
    return tc.diff_x(x), tc.diff_y(x)


def to_gray(image) -> Tensor:
    """Channel mean."""
    return tc.mean(_tensor(image), axis=1)


def ssim(a, b) -> Tensor:
    """Per-pixel SSIM over 3x3 windows with reflective padding; same shape as inputs."""
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise tc.ShapeError(f"ssim: shapes differ {a.shape} vs {b.shape}")

    def pool(t):
        return tc.avg_pool3(tc.pad_reflect(t))

    mu_a = pool(a)
    mu_b = pool(b)
    sigma_a = pool(a * a) - mu_a * mu_a
    sigma_b = pool(b * b) - mu_b * mu_b
    sigma_ab = pool(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * sigma_ab + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (sigma_a + sigma_b + SSIM_C2)
    return num / den


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data: np.ndarray):
    """Write a single-channel float map as little-endian "Pf", rows bottom-up."""
    arr = np.asarray(data, dtype=np.float32)
    arr = np.squeeze(arr) if arr.ndim > 2 else arr
    if arr.ndim != 2:
        raise ImageFormatError(f"PFM writer expects a 2-D map, got shape {np.shape(data)}")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def _read_header(buf: bytes, count: int, what: str) -> tuple[list[bytes], int]:
    """Split ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if m is None:
            raise ImageFormatError(f"{what}: truncated header")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError(f"{what}: missing whitespace after header")
    return tokens, pos + 1


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into an (H, W) float32 array (top row first)."""
    path = Path(path)
    buf = path.read_bytes()
    tokens, offset = _read_header(buf, 4, f"PFM {path}")
    if tokens[0] != b"Pf":
        kind = tokens[0].decode("ascii", "replace")
        raise ImageFormatError(f"PFM {path}: expected grayscale 'Pf' identifier, got {kind!r}")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise ImageFormatError(f"PFM {path}: malformed header: {exc}") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise ImageFormatError(f"PFM {path}: invalid dimensions {w}x{h} or scale {scale}")
    need = 4 * w * h
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise ImageFormatError(f"PFM {path}: truncated payload, {len(payload)} of {need} bytes")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w)[::-1]
    return arr.astype(np.float32)


# ---------------------------------------------------------------------------
# PPM


def write_ppm(path, image: np.ndarray):
    """Write a (3, H, W) image in [0, 1] as binary P6 with maxval 255."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageFormatError(f"PPM writer expects (3, H, W), got shape {np.shape(image)}")
    _, h, w = arr.shape
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file (maxval 255 only) into a (3, H, W) float32 image."""
    path = Path(path)
    buf = path.read_bytes()
    tokens, offset = _read_header(buf, 4, f"PPM {path}")
    if tokens[0] != b"P6":
        raise ImageFormatError(f"PPM {path}: expected 'P6', got {tokens[0].decode('ascii', 'replace')!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ImageFormatError(f"PPM {path}: malformed header: {exc}") from None
    if maxval != 255:
        raise ImageFormatError(f"PPM {path}: only maxval 255 is supported, got {maxval}")
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"PPM {path}: invalid dimensions {w}x{h}")
    need = 3 * w * h
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise ImageFormatError(f"PPM {path}: truncated payload, {len(payload)} of {need} bytes")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return (q.astype(np.float32) / 255.0)
