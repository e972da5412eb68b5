"""Sensitivity-weighted cut-and-mix augmentation.

One augmented sample is built from 1..3 sources: source 0 is the base,
each further source contributes one pasted rectangle, and later rects
overwrite earlier ones.  The mixed label weights are the shares of
sensitivity-map mass owned by each source's region in the MIXED image,
so a pasted patch that carries most of the visible distortion also
carries most of the label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ImageRgb, SampleManifest, SoftLabel
from .seeds import derive_rng, derive_seed
from .sensitivity import DsmProvider, gt_dsm, predict_dsm, upsample_bilinear

__all__ = [
    "Rect",
    "RegionMap",
    "sample_patch_rect",
    "mix_images",
    "assign_lambdas",
    "dsmix_sample",
]

Rect = tuple[int, int, int, int]  # (px, py, pw, ph)

MAX_SOURCES = 3


@dataclass(frozen=True)
class RegionMap:
    """Per-pixel source ownership for a mixed image."""

    owner: np.ndarray
    n_sources: int

    def __post_init__(self):
        owner = np.asarray(self.owner)
        if owner.ndim != 2:
            raise ValueError(f"owner map must be 2d, got shape {owner.shape}")
        if not np.issubdtype(owner.dtype, np.integer):
            raise ValueError("owner map must be integer")
        if self.n_sources < 1:
            raise ValueError("n_sources must be >= 1")
        if owner.size and (owner.min() < 0 or owner.max() >= self.n_sources):
            raise ValueError(f"owner values must lie in [0, {self.n_sources})")
        owner = owner.copy()
        owner.flags.writeable = False
        object.__setattr__(self, "owner", owner)


def sample_patch_rect(img_w: int, img_h: int, seed: int) -> Rect:
    """Draw a uniform paste rectangle, fully inside the image.

    Each side is uniform over the integers in [0.2, 0.6] of the image
    side, and the offset is uniform over all in-bounds positions.
    """
    if img_w < 16 or img_h < 16:
        raise ValueError(f"image {img_w}x{img_h} too small to sample patches from")
    rng = derive_rng(seed, "patch-rect")
    pw = int(rng.integers(int(np.ceil(0.2 * img_w)), int(np.floor(0.6 * img_w)) + 1))
    ph = int(rng.integers(int(np.ceil(0.2 * img_h)), int(np.floor(0.6 * img_h)) + 1))
    px = int(rng.integers(0, img_w - pw + 1))
    py = int(rng.integers(0, img_h - ph + 1))
    return px, py, pw, ph


def _check_rect(rect: Rect, w: int, h: int) -> Rect:
    px, py, pw, ph = (int(v) for v in rect)
    if pw < 0 or ph < 0 or px < 0 or py < 0 or px + pw > w or py + ph > h:
        raise ValueError(f"rect {rect} outside {w}x{h} image bounds")
    return px, py, pw, ph


def mix_images(sources: Sequence[ImageRgb], rects: Sequence[Rect]) -> tuple[ImageRgb, RegionMap]:
    """Paste rects of sources 1..k, in order, onto source 0.

    Returns the mixed image and the ownership map; pixel (y, x) of the
    output equals sources[owner[y, x]] at (y, x) exactly.
    """
    if not 1 <= len(sources) <= MAX_SOURCES:
        raise ValueError(f"need 1..{MAX_SOURCES} sources, got {len(sources)}")
    if len(rects) != len(sources) - 1:
        raise ValueError("need exactly one rect per non-base source")
    base = sources[0]
    for s in sources[1:]:
        if s.pixels.shape != base.pixels.shape:
            raise ValueError("all sources must share dimensions")
    out = base.pixels.copy()
    owner = np.zeros((base.height, base.width), dtype=np.int64)
    for k, rect in enumerate(rects, start=1):
        px, py, pw, ph = _check_rect(rect, base.width, base.height)
        out[py : py + ph, px : px + pw] = sources[k].pixels[py : py + ph, px : px + pw]
        owner[py : py + ph, px : px + pw] = k
    return ImageRgb(out), RegionMap(owner, len(sources))


def assign_lambdas(dsm_fullres: np.ndarray, region: RegionMap) -> np.ndarray:
    """Split sensitivity mass by region ownership into label weights.

    lambda_k is the fraction of total map mass inside source k's region.
    A map with zero total mass (e.g. two identical pristine sources)
    falls back to the pixel-area ratio.
    """
    dsm_fullres = np.asarray(dsm_fullres, dtype=np.float64)
    if dsm_fullres.shape != region.owner.shape:
        raise ValueError(
            f"map shape {dsm_fullres.shape} does not match region {region.owner.shape}"
        )
    if dsm_fullres.size and dsm_fullres.min() < 0:
        raise ValueError("sensitivity map must be nonnegative")
    owners = region.owner.ravel()
    mass = np.bincount(owners, weights=dsm_fullres.ravel(), minlength=region.n_sources)
    total = mass.sum()
    if total > 0:
        return mass / total
    area = np.bincount(owners, minlength=region.n_sources).astype(np.float64)
    return area / owners.size


def _source_meta(label: SoftLabel) -> dict:
    probs = label.probs
    top = int(np.argmax(probs))
    if probs[top] != 1.0:
        return {"dtype": "mixed", "level": 0}
    spec = label.class_space.spec_at(top)
    if spec is None:
        return {"dtype": "reference", "level": 0}
    return {"dtype": spec[0], "level": spec[1]}


def dsmix_sample(
    sources: Sequence[tuple[ImageRgb, SoftLabel]],
    provider: DsmProvider,
    seed: int,
    sample_id: str | None = None,
    source_ids: Sequence[str] | None = None,
    refs: Sequence[ImageRgb] | None = None,
    area_labels: bool = False,
) -> tuple[ImageRgb, SoftLabel, SampleManifest]:
    """Build one augmented sample from 1..3 (image, label) sources.

    Rects are drawn from `seed`, the images are mixed, and the label is
    the lambda-weighted combination of the source labels, with lambdas
    taken from the provider's sensitivity map of the mixed image (never
    of the sources).  A ground_truth provider additionally needs `refs`,
    the per-source pristine images, which are mixed with the same rects
    to form the reference for the mixed image.

    `area_labels` replaces the sensitivity weighting with the plain
    pixel-area ratio (the classic cut-and-mix convention) while keeping
    rects and pixels identical; it exists for ablation runs and skips
    the provider entirely.

    Dimensions must be multiples of the provider patch size so the
    upsampled map aligns with the pixel grid.
    """
    if not 1 <= len(sources) <= MAX_SOURCES:
        raise ValueError(f"need 1..{MAX_SOURCES} sources, got {len(sources)}")
    images = [img for img, _ in sources]
    labels = [lab for _, lab in sources]
    space = labels[0].class_space
    for lab in labels[1:]:
        if lab.class_space != space:
            raise ValueError("source labels must share one class space")
    h, w = images[0].height, images[0].width
    if h % provider.patch_size or w % provider.patch_size:
        raise ValueError(
            f"image {w}x{h} not a multiple of patch size {provider.patch_size}"
        )

    rects = [
        sample_patch_rect(w, h, derive_seed(seed, "rect", k))
        for k in range(1, len(sources))
    ]
    mixed, region = mix_images(images, rects)

    if area_labels:
        lambdas = assign_lambdas(np.ones((h, w)), region)
    elif provider.kind == "ground_truth":
        if refs is None or len(refs) != len(sources):
            raise ValueError("ground_truth provider needs one reference per source")
        mixed_ref, _ = mix_images(list(refs), rects)
        dsm = gt_dsm(mixed, mixed_ref, provider.patch_size)
        lambdas = assign_lambdas(upsample_bilinear(dsm, provider.patch_size), region)
    else:
        dsm = predict_dsm(mixed, provider)
        lambdas = assign_lambdas(upsample_bilinear(dsm, provider.patch_size), region)

    probs = np.zeros(space.num_classes)
    for lam, lab in zip(lambdas, labels):
        probs += lam * lab.probs
    label = SoftLabel(probs, space)

    if sample_id is None:
        sample_id = f"mix-{seed:016x}"
    if source_ids is None:
        source_ids = tuple(f"src-{k}" for k in range(len(sources)))
    elif len(source_ids) != len(sources):
        raise ValueError("need one source id per source")
    manifest = SampleManifest(
        sample_id=sample_id,
        source_ids=tuple(source_ids),
        mask_rects=tuple(rects),
        lambdas=tuple(float(v) for v in lambdas),
        label=label,
        seed=int(seed),
        distortion_meta=tuple(_source_meta(lab) for lab in labels),
    )
    return mixed, label, manifest
