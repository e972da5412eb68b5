"""Synthetic distortion bank.

Eight distortion types, five severity levels each, with schedules read
from data/distortions.toml.  Levels are calibrated so that severity is
monotone: for a fixed image and type, MSE against the clean reference
never decreases from one level to the next.

Stochastic distortions (gaussian_noise, fnoise) take an explicit
generator; everything else is a pure function of (image, type, level).
"""

from __future__ import annotations

import math
from functools import lru_cache
from importlib import resources

import numpy as np
import scipy.fft
import scipy.ndimage
import tomli

from .core import ClassSpace, ImageRgb

__all__ = [
    "list_distortions",
    "distortion_levels",
    "default_class_space",
    "class_index",
    "apply_distortion",
    "count_degradation_space",
]

N_LEVELS = 5

_STOCHASTIC = frozenset({"gaussian_noise", "fnoise"})


@lru_cache(maxsize=1)
def _schedules() -> dict:
    data = resources.files("sensmix").joinpath("data/distortions.toml").read_bytes()
    return tomli.loads(data.decode("utf-8"))


def list_distortions() -> tuple[str, ...]:
    """Distortion type names, in class-space order."""
    return tuple(_schedules().keys())


def distortion_levels() -> int:
    return N_LEVELS


def default_class_space() -> ClassSpace:
    return ClassSpace(list_distortions(), N_LEVELS)


def class_index(dtype_name: str | None, level: int = 0) -> int:
    """Joint class index; None (or level 0) means the reference class."""
    return default_class_space().index_of(dtype_name, level)


def _level_param(dtype_name: str, level: int, key: str):
    sched = _schedules().get(dtype_name)
    if sched is None:
        raise ValueError(f"unknown distortion type {dtype_name!r}")
    if not 1 <= level <= N_LEVELS:
        raise ValueError(f"level {level} outside 1..{N_LEVELS}")
    return sched[key][level - 1]


def _gaussian_noise(px: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
    sigma = _level_param("gaussian_noise", level, "sigma")
    return px + rng.normal(0.0, sigma, size=px.shape)


def _gaussian_blur(px: np.ndarray, level: int) -> np.ndarray:
    sigma = _level_param("gaussian_blur", level, "sigma")
    return scipy.ndimage.gaussian_filter(px, sigma=(sigma, sigma, 0.0), mode="reflect")


def _jpeg_blocking(px: np.ndarray, level: int) -> np.ndarray:
    step = _level_param("jpeg_blocking", level, "step")
    h, w = px.shape[:2]
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    padded = np.pad(px, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    ph, pw = padded.shape[:2]
    blocks = padded.reshape(ph // 8, 8, pw // 8, 8, 3).transpose(0, 2, 4, 1, 3)
    coef = scipy.fft.dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / step) * step
    out = scipy.fft.idctn(coef, axes=(-2, -1), norm="ortho")
    out = out.transpose(0, 3, 1, 4, 2).reshape(ph, pw, 3)
    return out[:h, :w, :]


def _contrast_shift(px: np.ndarray, level: int) -> np.ndarray:
    c = _level_param("contrast_shift", level, "factor")
    return 0.5 + (px - 0.5) * c


def _fnoise(px: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
    amplitude = _level_param("fnoise", level, "amplitude")
    h, w = px.shape[:2]
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = np.inf  # no DC component, so the mean level is untouched
    spectrum = (rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))) / f
    noise = np.fft.ifft2(spectrum).real
    noise /= max(noise.std(), 1e-12)
    return px + amplitude * noise[:, :, None]


def _motion_blur(px: np.ndarray, level: int) -> np.ndarray:
    length = _level_param("motion_blur", level, "length")
    return scipy.ndimage.uniform_filter1d(px, size=length, axis=1, mode="reflect")


def _pixelate(px: np.ndarray, level: int) -> np.ndarray:
    b = _level_param("pixelate", level, "block")
    h, w = px.shape[:2]
    ys = np.arange(0, h, b)
    xs = np.arange(0, w, b)
    cnt_y = np.diff(np.append(ys, h))
    cnt_x = np.diff(np.append(xs, w))
    sums = np.add.reduceat(np.add.reduceat(px, ys, axis=0), xs, axis=1)
    means = sums / (cnt_y[:, None] * cnt_x[None, :])[:, :, None]
    return np.repeat(np.repeat(means, cnt_y, axis=0), cnt_x, axis=1)


def _color_saturate(px: np.ndarray, level: int) -> np.ndarray:
    s = _level_param("color_saturate", level, "factor")
    gray = px.mean(axis=2, keepdims=True)
    return gray + (px - gray) * s


def apply_distortion(
    img: ImageRgb,
    dtype_name: str,
    level: int,
    rng: np.random.Generator | None = None,
) -> ImageRgb:
    """Apply one distortion at the given level; output stays in [0, 1].

    gaussian_noise and fnoise require `rng`; the result is then a pure
    function of (image, type, level, generator state).
    """
    if dtype_name not in _schedules():
        raise ValueError(f"unknown distortion type {dtype_name!r}")
    if dtype_name in _STOCHASTIC:
        if rng is None:
            raise ValueError(f"{dtype_name} requires an rng")
        if dtype_name == "gaussian_noise":
            out = _gaussian_noise(img.pixels, level, rng)
        else:
            out = _fnoise(img.pixels, level, rng)
    elif dtype_name == "gaussian_blur":
        out = _gaussian_blur(img.pixels, level)
    elif dtype_name == "jpeg_blocking":
        out = _jpeg_blocking(img.pixels, level)
    elif dtype_name == "contrast_shift":
        out = _contrast_shift(img.pixels, level)
    elif dtype_name == "motion_blur":
        out = _motion_blur(img.pixels, level)
    elif dtype_name == "pixelate":
        out = _pixelate(img.pixels, level)
    else:
        out = _color_saturate(img.pixels, level)
    return ImageRgb(np.clip(out, 0.0, 1.0))


def count_degradation_space(slots: int, include_empty: bool = False) -> int:
    """Count ordered, non-repeating distortion chains over `slots` types.

    Chains pick i distinct types (i = 1..slots) and apply them in some
    order, so the count is sum over i of C(slots, i) * i!.  The empty
    chain is excluded unless `include_empty` is set.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    total = sum(math.comb(slots, i) * math.factorial(i) for i in range(1, slots + 1))
    return total + 1 if include_empty else total
