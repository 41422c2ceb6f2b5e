"""Preprocessing and augmentation of RGB images.

Resampling uses the half-pixel convention: destination index ``d`` maps to
source coordinate ``(d + 0.5) * in / out - 0.5``. Results are quantized
back to 8 bits with round-half-up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fundusnet.data.netpbm import Image
from fundusnet.rng import Rng

DEFAULT_CROP_THRESHOLD = 15
_SNAP = 1e-9


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half-up into uint8, clamping to [0, 255]."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def crop_black_border(image: Image, threshold: int = DEFAULT_CROP_THRESHOLD) -> Image:
    """Crop to the bounding box of pixels whose channel mean exceeds ``threshold``."""
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold must lie in [0, 255], got {threshold}")
    # mean > t  <=>  sum > 3t, without float rounding
    mask = image.pixels.astype(np.int32).sum(axis=2) > 3 * threshold
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return image
    return Image(image.pixels[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].copy())


def _axis_samples(n_in: int, n_out: int):
    d = np.arange(n_out, dtype=np.float64)
    s = np.clip((d + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def resize_array(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (h, w) or (h, w, c) float array."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    v = np.asarray(values, dtype=np.float64)
    y0, y1, fy = _axis_samples(v.shape[0], out_h)
    x0, x1, fx = _axis_samples(v.shape[1], out_w)
    extra = (None,) * (v.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = v[y0][:, x0] * (1 - fx) + v[y0][:, x1] * fx
    bottom = v[y1][:, x0] * (1 - fx) + v[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(image: Image, out_w: int, out_h: int) -> Image:
    if (out_w, out_h) == (image.width, image.height):
        return Image(image.pixels.copy())
    return Image(quantize(resize_array(image.pixels, out_h, out_w)))


def hflip(image: Image) -> Image:
    return Image(image.pixels[:, ::-1].copy())


def vflip(image: Image) -> Image:
    return Image(image.pixels[::-1].copy())


def _cos_sin(angle_degrees: float) -> tuple[float, float]:
    a = angle_degrees % 360.0
    if a % 90.0 == 0.0:
        return {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}[a]
    r = math.radians(angle_degrees)
    return math.cos(r), math.sin(r)


def rotate(image: Image, angle_degrees: float) -> Image:
    """Rotate counter-clockwise (as displayed) about the image center.

    Each destination pixel is mapped back into the source and sampled
    bilinearly; sources outside the image become black.
    """
    h, w = image.height, image.width
    cos, sin = _cos_sin(angle_degrees)
    if (cos, sin) == (1.0, 0.0):
        return Image(image.pixels.copy())
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    dy, dx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx -= cx
    dy -= cy
    sx = cx + cos * dx - sin * dy
    sy = cy + sin * dx + cos * dy
    for s in (sx, sy):
        near = np.abs(s - np.round(s)) < _SNAP
        s[near] = np.round(s[near])
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.where(inside, sx, 0.0)
    sy = np.where(inside, sy, 0.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    p = image.pixels.astype(np.float64)
    top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
    bottom = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
    out = (top * (1 - fy) + bottom * fy) * inside[..., None]
    return Image(quantize(out))


@dataclass(frozen=True)
class AugmentPolicy:
    hflip: float = 0.5
    vflip: float = 0.5
    rotation: float = 25.0

    def to_json(self) -> dict:
        return {"hflip": self.hflip, "vflip": self.vflip, "rotation": self.rotation}


def augment(image: Image, rng: Rng, policy: AugmentPolicy = AugmentPolicy()) -> Image:
    """Random flips then rotation. Always consumes exactly three draws:
    hflip coin, vflip coin, angle in [-rotation, +rotation)."""
    do_h = rng.bernoulli(policy.hflip)
    do_v = rng.bernoulli(policy.vflip)
    angle = policy.rotation * (2.0 * rng.uniform() - 1.0)
    if do_h:
        image = hflip(image)
    if do_v:
        image = vflip(image)
    if angle != 0.0:
        image = rotate(image, angle)
    return image


def to_tensor(image: Image) -> np.ndarray:
    """(3, h, w) float64 in [0, 1]."""
    return image.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def from_tensor(tensor: np.ndarray) -> Image:
    return Image(quantize(np.asarray(tensor).transpose(1, 2, 0) * 255.0))
