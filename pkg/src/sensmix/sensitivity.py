"""Distortion-sensitivity maps (DSMs) and providers.

A DSM is a coarse (H/p, W/p) float64 grid of per-block distortion
magnitude.  Three ways to get one:

  * ground truth: channel-mean |distorted - reference|, average-pooled;
  * gradient map: reference-free, pooled gradient magnitude;
  * tiny predictor: reference-free, a trained per-patch linear model.

Block means are computed in exact rational arithmetic with one final
rounding, so pooled values are correctly rounded and independent of
summation order.  That keeps grids bit-identical across platforms and
makes the constant-block examples come out exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import ImageRgb

__all__ = [
    "DsmProvider",
    "gt_dsm",
    "gradient_dsm",
    "predict_dsm",
    "upsample_bilinear",
    "pool_mean",
    "fit_tiny_predictor",
    "save_dsm",
    "load_dsm",
    "dsm_heatmap",
]

PROVIDER_KINDS = ("ground_truth", "gradient_map", "tiny_predictor")


def _exact_mean(values: np.ndarray) -> float:
    """Correctly rounded mean of float64 values.

    Finite doubles are dyadic rationals, so the sum is accumulated as an
    integer over a shared power-of-two denominator; the only rounding is
    the final conversion back to float.
    """
    num = 0
    den_exp = 0
    for v in values:
        n, d = float(v).as_integer_ratio()
        e = d.bit_length() - 1
        if e > den_exp:
            num = (num << (e - den_exp)) + n
            den_exp = e
        else:
            num += n << (den_exp - e)
    return float(Fraction(num, (1 << den_exp) * values.size))


def _check_poolable(h: int, w: int, p: int) -> None:
    if p < 1:
        raise ValueError("patch size must be >= 1")
    if h % p or w % p:
        raise ValueError(
            f"dimensions {w}x{h} are not multiples of {p}; crop_to_multiple first"
        )


def pool_mean(field: np.ndarray, p: int) -> np.ndarray:
    """Average-pool a (H, W) or (H, W, C) field into a (H/p, W/p) grid.

    Channels, when present, are averaged into the same cell mean.
    """
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape[:2]
    _check_poolable(h, w, p)
    grid = np.empty((h // p, w // p))
    for i in range(h // p):
        for j in range(w // p):
            block = field[i * p : (i + 1) * p, j * p : (j + 1) * p]
            grid[i, j] = _exact_mean(block.ravel())
    return grid


def gt_dsm(dist: ImageRgb, ref: ImageRgb, p: int = 8) -> np.ndarray:
    """Ground-truth DSM: pooled channel-mean absolute difference.

    Each cell is the mean of |dist - ref| over its p*p*3 block, which
    equals pooling the channel-mean difference image.
    """
    if dist.pixels.shape != ref.pixels.shape:
        raise ValueError(
            f"image dimensions differ: {dist.pixels.shape} vs {ref.pixels.shape}"
        )
    return pool_mean(np.abs(dist.pixels - ref.pixels), p)


def gradient_dsm(dist: ImageRgb, p: int = 8) -> np.ndarray:
    """Reference-free DSM: pooled gradient magnitude of the channel mean.

    Central differences in the interior, one-sided at the borders.
    """
    gray = dist.pixels.mean(axis=2)
    _check_poolable(gray.shape[0], gray.shape[1], p)
    gy, gx = np.gradient(gray)
    return pool_mean(np.hypot(gy, gx), p)


@dataclass(frozen=True)
class DsmProvider:
    """A way of producing DSMs: ground_truth, gradient_map, or tiny_predictor.

    The tiny predictor is a shared linear map over flattened p*p*3
    patches (weights followed by one bias), clamped at zero.
    """

    kind: str
    patch_size: int = 8
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.patch_size < 1:
            raise ValueError("patch size must be >= 1")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            want = 3 * self.patch_size * self.patch_size + 1
            if w.shape != (want,):
                raise ValueError(f"expected {want} weights, got shape {w.shape}")
            w = w.copy()
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)

    @property
    def blind(self) -> bool:
        return self.kind != "ground_truth"


def _patchify(px: np.ndarray, p: int) -> np.ndarray:
    """(H, W, 3) -> (H/p * W/p, p*p*3) row-major patch matrix."""
    h, w = px.shape[:2]
    patches = px.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4)
    return patches.reshape(-1, p * p * 3)


def predict_dsm(dist: ImageRgb, provider: DsmProvider, ref: ImageRgb | None = None) -> np.ndarray:
    """Produce a DSM for `dist` using the given provider.

    ground_truth needs `ref`; the other kinds are blind and ignore it.
    Predictor outputs are clamped at zero so downstream mass ratios keep
    a well-defined sign.
    """
    p = provider.patch_size
    if provider.kind == "ground_truth":
        if ref is None:
            raise ValueError("ground_truth provider needs a reference image")
        return gt_dsm(dist, ref, p)
    if provider.kind == "gradient_map":
        return gradient_dsm(dist, p)
    if provider.weights is None:
        raise ValueError("tiny_predictor provider has no trained weights")
    px = dist.pixels
    _check_poolable(px.shape[0], px.shape[1], p)
    flat = _patchify(px, p)
    raw = flat @ provider.weights[:-1] + provider.weights[-1]
    grid = raw.reshape(px.shape[0] // p, px.shape[1] // p)
    return np.maximum(grid, 0.0)


def upsample_bilinear(dsm: np.ndarray, p: int) -> np.ndarray:
    """Expand a (gh, gw) grid to (gh*p, gw*p) by bilinear interpolation.

    Cell values sit at patch centers (half-pixel alignment); sampling
    points outside the center lattice clamp to the border cells.  The
    lerp form a + t*(b - a) keeps constant grids exactly constant.
    """
    dsm = np.asarray(dsm, dtype=np.float64)
    if dsm.ndim != 2 or dsm.size == 0:
        raise ValueError(f"expected a nonempty 2d grid, got shape {dsm.shape}")
    if p < 1:
        raise ValueError("patch size must be >= 1")
    gh, gw = dsm.shape

    def axis_coords(n_out: int, n_cells: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_out) + 0.5) / p - 0.5
        pos = np.clip(pos, 0.0, n_cells - 1.0)
        lo = np.floor(pos).astype(int)
        lo = np.minimum(lo, n_cells - 2) if n_cells > 1 else np.zeros_like(lo)
        t = pos - lo
        return lo, lo + 1 if n_cells > 1 else lo, t

    if gh == 1 and gw == 1:
        return np.full((p, p), dsm[0, 0])
    y0, y1, ty = axis_coords(gh * p, gh)
    x0, x1, tx = axis_coords(gw * p, gw)
    c00 = dsm[np.ix_(y0, x0)]
    c01 = dsm[np.ix_(y0, x1)]
    c10 = dsm[np.ix_(y1, x0)]
    c11 = dsm[np.ix_(y1, x1)]
    top = c00 + tx[None, :] * (c01 - c00)
    bot = c10 + tx[None, :] * (c11 - c10)
    return top + ty[:, None] * (bot - top)


def fit_tiny_predictor(
    pairs: list[tuple[ImageRgb, ImageRgb]],
    p: int = 8,
    epochs: int = 200,
    lr: float = 0.05,
    seed: int = 0,
) -> DsmProvider:
    """Train the per-patch linear predictor on (distorted, reference) pairs.

    Targets are ground-truth DSM cells; the objective is plain MSE over
    all patches, minimized by full-batch gradient descent from a small
    random init.  Returns a ready-to-use tiny_predictor provider.
    """
    if not pairs:
        raise ValueError("at least one training pair is required")
    feats = []
    targets = []
    for dist, ref in pairs:
        feats.append(_patchify(dist.pixels, p))
        targets.append(gt_dsm(dist, ref, p).ravel())
    x = np.concatenate(feats, axis=0)
    y = np.concatenate(targets, axis=0)
    # descend on centered features (the raw common-mode component makes
    # the problem too ill-conditioned for a fixed step), then fold the
    # shift back into the bias so the stored form stays w.x + b
    m = x.mean(axis=0)
    xc = x - m

    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1e-3, size=x.shape[1])
    b = float(y.mean())
    n = x.shape[0]
    for _ in range(epochs):
        resid = (xc @ w + b) - y
        w -= lr * (2.0 / n) * (xc.T @ resid)
        b -= lr * (2.0 / n) * float(resid.sum())
    return DsmProvider("tiny_predictor", patch_size=p, weights=np.append(w, b - w @ m))


def save_dsm(path: str | Path, dsm: np.ndarray) -> None:
    """Write a grid as little-endian float32 after an 8-byte (w, h) header."""
    dsm = np.asarray(dsm, dtype=np.float64)
    if dsm.ndim != 2:
        raise ValueError(f"expected a 2d grid, got shape {dsm.shape}")
    gh, gw = dsm.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", gw, gh))
        fh.write(dsm.astype("<f4").tobytes(order="C"))


def load_dsm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        gw, gh = struct.unpack("<ii", header)
        if gw < 1 or gh < 1:
            raise ValueError(f"{path}: bad grid size {gw}x{gh}")
        data = fh.read(4 * gw * gh)
    if len(data) != 4 * gw * gh:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype="<f4").reshape(gh, gw).astype(np.float64)


def dsm_heatmap(dsm: np.ndarray, p: int) -> ImageRgb:
    """Render a grid as a full-resolution grayscale image for inspection."""
    full = upsample_bilinear(dsm, p)
    top = full.max()
    if top > 0:
        full = full / top
    return ImageRgb(np.repeat(np.clip(full, 0.0, 1.0)[:, :, None], 3, axis=2))
