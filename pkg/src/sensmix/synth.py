"""Procedural reference images for self-contained corpora.

Four pattern families (plaids, smooth blobs, color tiles, gradient
scenes with disks) drawn deterministically from a seed.  Values are
kept inside [0.08, 0.92] so every distortion type has headroom to move
pixels at all severity levels.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage

from .core import ImageRgb
from .seeds import derive_rng, derive_seed

__all__ = ["make_reference", "make_reference_set"]

LOW, HIGH = 0.08, 0.92


def _normalize(px: np.ndarray) -> np.ndarray:
    lo, hi = px.min(), px.max()
    if hi - lo < 1e-9:
        return np.full_like(px, 0.5)
    return (px - lo) / (hi - lo)


def _plaid(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    px = np.zeros((size, size, 3))
    for c in range(3):
        fx, fy = rng.uniform(0.5, 5.0, size=2)
        gx, gy = rng.uniform(0.5, 5.0, size=2)
        ph = rng.uniform(0.0, 2 * np.pi, size=2)
        px[:, :, c] = np.sin(2 * np.pi * (fx * xx + fy * yy) + ph[0]) + np.cos(
            2 * np.pi * (gx * xx - gy * yy) + ph[1]
        )
    return _normalize(px)


def _blobs(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = rng.normal(size=(size, size, 3))
    sigma = rng.uniform(2.0, 7.0)
    px = scipy.ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0.5), mode="wrap")
    return _normalize(px)


def _tiles(rng: np.random.Generator, size: int) -> np.ndarray:
    px = np.tile(rng.uniform(0.2, 0.8, size=3), (size, size, 1))
    for _ in range(int(rng.integers(6, 14))):
        w = int(rng.integers(size // 8, size // 2))
        h = int(rng.integers(size // 8, size // 2))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        px[y : y + h, x : x + w] = rng.uniform(0.0, 1.0, size=3)
    return px


def _disks(rng: np.random.Generator, size: int) -> np.ndarray:
    top = rng.uniform(0.0, 1.0, size=3)
    bottom = rng.uniform(0.0, 1.0, size=3)
    t = (np.arange(size) / (size - 1))[:, None, None]
    px = top * (1 - t) + bottom * t
    px = np.broadcast_to(px, (size, size, 3)).copy()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(3, 8))):
        cx, cy = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 12, size / 4)
        color = rng.uniform(0.0, 1.0, size=3)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        px[mask] = color
    return px


_FAMILIES = (_plaid, _blobs, _tiles, _disks)


def make_reference(seed: int, size: int = 64) -> ImageRgb:
    """One procedural reference image, deterministic in (seed, size)."""
    if size < 16:
        raise ValueError("size must be >= 16")
    rng = derive_rng(seed, "synth-ref")
    family = _FAMILIES[int(rng.integers(0, len(_FAMILIES)))]
    px = family(rng, size)
    return ImageRgb(LOW + (HIGH - LOW) * np.clip(px, 0.0, 1.0))


def make_reference_set(n: int, seed: int, size: int = 64) -> list[tuple[str, ImageRgb]]:
    """n named references; ids are stable and zero-padded for sorting."""
    if n < 1:
        raise ValueError("need at least one reference")
    return [
        (f"ref-{i:04d}", make_reference(derive_seed(seed, "synth-set", i), size))
        for i in range(n)
    ]
