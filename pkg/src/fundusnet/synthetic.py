"""Synthetic two-class blob corpus for smoke tests and the end-to-end checks.

Each image mimics a fundus photograph: a noisy mid-gray disc on a black
field. Class ``macular_degeneration`` images carry a bright Gaussian blob
inside the disc, class ``healthy`` images a dark one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fundusnet.data.manifest import HEALTHY, MD, Manifest, Record
from fundusnet.data.netpbm import Image, write_ppm
from fundusnet.data.transforms import quantize
from fundusnet.rng import Rng

BACKGROUND = 128.0
AMPLITUDE = 110.0
NOISE = 12.0


@dataclass(frozen=True)
class Blob:
    cx: float
    cy: float
    sigma: float

    def bbox(self, size: int, dilate: int = 0) -> tuple[int, int, int, int]:
        """(row0, row1, col0, col1) inclusive: center +/- 2 sigma, grown by ``dilate``, clipped."""
        r = 2 * self.sigma + dilate
        lo = lambda c: max(0, int(np.floor(c - r)))
        hi = lambda c: min(size - 1, int(np.ceil(c + r)))
        return lo(self.cy), hi(self.cy), lo(self.cx), hi(self.cx)


def blob_image(rng: Rng, bright: bool, size: int = 64, sigma: float = 5.0) -> tuple[Image, Blob]:
    center = (size - 1) / 2.0
    disc_radius = size / 2.0 - 1
    # blob center uniform over the disc area, with the blob kept inside the disc
    reach = disc_radius - 2 * sigma - 1
    radius = reach * np.sqrt(rng.uniform())
    theta = 2 * np.pi * rng.uniform()
    cx = center + radius * np.cos(theta)
    cy = center + radius * np.sin(theta)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    sign = 1.0 if bright else -1.0
    noise = (rng.uniforms(size * size * 3).reshape(size, size, 3) * 2 - 1) * NOISE
    disc = ((xx - center) ** 2 + (yy - center) ** 2 <= disc_radius**2)[..., None]
    pixels = (BACKGROUND + sign * AMPLITUDE * bump[..., None] + noise) * disc
    return Image(quantize(pixels)), Blob(cx, cy, sigma)


def write_blob_corpus(out_dir, n: int = 250, size: int = 64, seed: int = 42):
    """Write ``n`` PPMs (alternating classes) plus ``manifest.csv``.

    Returns ``(manifest, blobs)`` with blob geometry keyed by relative path.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = Rng(seed)
    records, blobs = [], {}
    for i in range(n):
        bright = i % 2 == 0
        image, blob = blob_image(rng, bright, size)
        rel = f"images/{i:04d}.ppm"
        (out / rel).write_bytes(write_ppm(image))
        records.append(Record(rel, MD if bright else HEALTHY))
        blobs[rel] = blob
    manifest = Manifest(tuple(records))
    tmp = out / "manifest.csv.tmp"
    tmp.write_text(manifest.to_csv(), encoding="utf-8")
    os.replace(tmp, out / "manifest.csv")
    return manifest, blobs
