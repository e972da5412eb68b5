"""Shared image, label, and manifest types plus raster/manifest I/O.

All pixel data lives in float64, range [0, 1], shape (H, W, 3).  Types
are immutable after construction so they can be shared freely across
worker processes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

__all__ = [
    "ImageRgb",
    "ClassSpace",
    "SoftLabel",
    "SampleManifest",
    "load_image",
    "save_image",
    "quantize8",
    "crop_to_multiple",
    "write_manifest",
    "read_manifest",
]

LABEL_SUM_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageRgb:
    """A dense RGB raster with float64 values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixel array, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError("image has a zero dimension")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel values must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ClassSpace:
    """Joint label space: one reference class plus (type, level) pairs.

    Index 0 is the reference class; index 1 + t * n_levels + (level - 1)
    is distortion type t at the given 1-based level.
    """

    dtype_names: tuple[str, ...]
    n_levels: int

    def __post_init__(self):
        if len(set(self.dtype_names)) != len(self.dtype_names):
            raise ValueError("duplicate distortion type names")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")

    @property
    def num_classes(self) -> int:
        return len(self.dtype_names) * self.n_levels + 1

    def index_of(self, dtype_name: str | None, level: int = 0) -> int:
        """Class index for a (type, level) pair, or 0 when dtype_name is None."""
        if dtype_name is None:
            return 0
        t = self.dtype_names.index(dtype_name)
        if not 1 <= level <= self.n_levels:
            raise ValueError(f"level {level} outside 1..{self.n_levels}")
        return 1 + t * self.n_levels + (level - 1)

    def spec_at(self, index: int) -> tuple[str, int] | None:
        """Inverse of index_of; None marks the reference class."""
        if not 0 <= index < self.num_classes:
            raise ValueError(f"class index {index} outside 0..{self.num_classes - 1}")
        if index == 0:
            return None
        t, l = divmod(index - 1, self.n_levels)
        return self.dtype_names[t], l + 1


@dataclass(frozen=True)
class SoftLabel:
    """Probability vector over the joint class space."""

    probs: np.ndarray
    class_space: ClassSpace

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] != self.class_space.num_classes:
            raise ValueError(
                f"expected {self.class_space.num_classes} probabilities, got shape {p.shape}"
            )
        if p.min() < 0.0:
            raise ValueError("probabilities must be nonnegative")
        if abs(float(p.sum()) - 1.0) > LABEL_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", _freeze(p))

    @classmethod
    def one_hot(cls, index: int, class_space: ClassSpace) -> "SoftLabel":
        p = np.zeros(class_space.num_classes)
        p[index] = 1.0
        return cls(p, class_space)

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Collapse the joint label to (type, level) marginals.

        Both marginals put the reference class first, so their lengths
        are n_types + 1 and n_levels + 1; each sums to 1 like the joint.
        """
        cs = self.class_space
        body = self.probs[1:].reshape(len(cs.dtype_names), cs.n_levels)
        type_m = np.concatenate(([self.probs[0]], body.sum(axis=1)))
        level_m = np.concatenate(([self.probs[0]], body.sum(axis=0)))
        return type_m, level_m


@dataclass(frozen=True)
class SampleManifest:
    """Provenance record for one generated or augmented sample."""

    sample_id: str
    source_ids: tuple[str, ...]
    mask_rects: tuple[tuple[int, int, int, int], ...]
    lambdas: tuple[float, ...]
    label: SoftLabel
    seed: int
    distortion_meta: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "source_ids", tuple(self.source_ids))
        object.__setattr__(self, "mask_rects", tuple(tuple(int(v) for v in r) for r in self.mask_rects))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "distortion_meta", tuple(dict(m) for m in self.distortion_meta))
        if len(self.lambdas) != len(self.source_ids):
            raise ValueError("one lambda per source is required")
        if abs(sum(self.lambdas) - 1.0) > LABEL_SUM_TOL:
            raise ValueError(f"lambdas sum to {sum(self.lambdas)!r}, not 1")

    def to_json_obj(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "source_ids": list(self.source_ids),
            "mask_rects": [list(r) for r in self.mask_rects],
            "lambdas": list(self.lambdas),
            "label": {
                "probs": self.label.probs.tolist(),
                "class_space": {
                    "dtypes": list(self.label.class_space.dtype_names),
                    "levels": self.label.class_space.n_levels,
                },
            },
            "seed": self.seed,
            "distortion_meta": [dict(m) for m in self.distortion_meta],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SampleManifest":
        space = ClassSpace(
            tuple(obj["label"]["class_space"]["dtypes"]),
            int(obj["label"]["class_space"]["levels"]),
        )
        return cls(
            sample_id=obj["sample_id"],
            source_ids=tuple(obj["source_ids"]),
            mask_rects=tuple(tuple(r) for r in obj["mask_rects"]),
            lambdas=tuple(obj["lambdas"]),
            label=SoftLabel(np.array(obj["label"]["probs"]), space),
            seed=int(obj["seed"]),
            distortion_meta=tuple(obj["distortion_meta"]),
        )


def load_image(path: str | Path) -> ImageRgb:
    """Load a PNG (or other PIL-decodable raster) into [0, 1] floats.

    8-bit images are scaled by 1/255 and 16-bit ones by 1/65535;
    grayscale is replicated to three channels.
    """
    path = Path(path)
    with Image.open(path) as im:
        if im.width == 0 or im.height == 0:
            raise ValueError(f"{path}: image has a zero dimension")
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            if im.mode not in ("RGB", "L"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return ImageRgb(np.clip(arr, 0.0, 1.0))


def save_image(img: ImageRgb, path: str | Path) -> None:
    """Write an 8-bit PNG; load_image(save_image(x)) is lossless for 8-bit data."""
    data = np.rint(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(Path(path), format="PNG")


def quantize8(img: ImageRgb) -> ImageRgb:
    """Snap pixel values to the 8-bit grid k/255, as a PNG round-trip would."""
    return ImageRgb(np.rint(img.pixels * 255.0) / 255.0)


def crop_to_multiple(img: ImageRgb, p: int) -> ImageRgb:
    """Center-crop so both dimensions become multiples of p.

    The crop keeps floor((W - W') / 2) pixels on the left/top, so for odd
    margins the extra pixel is dropped from the right/bottom.  Idempotent.
    """
    if p < 1:
        raise ValueError("patch size must be >= 1")
    if img.width < p or img.height < p:
        raise ValueError(f"image {img.width}x{img.height} smaller than patch size {p}")
    new_w = (img.width // p) * p
    new_h = (img.height // p) * p
    if new_w == img.width and new_h == img.height:
        return img
    x0 = (img.width - new_w) // 2
    y0 = (img.height - new_h) // 2
    return ImageRgb(img.pixels[y0 : y0 + new_h, x0 : x0 + new_w, :])


def write_manifest(path: str | Path, records: Iterable[SampleManifest]) -> int:
    """Write records as JSON lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_obj(), separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_manifest(path: str | Path) -> Iterator[SampleManifest]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield SampleManifest.from_json_obj(json.loads(line))
