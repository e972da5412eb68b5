"""Tiny encoder, classification pretraining, and linear probing.

TinyNet is a three-stage convolutional encoder (3x3 conv, tanh, 2x2
average pool; widths 8/16/32) with two classification heads, one over
distortion types and one over levels, both including the reference
class.  The teacher used for distillation is an identically shaped
network with fixed-seed random weights, frozen for all time.

Everything runs in float64 with hand-written forward/backward passes,
so the analytic gradients can be checked against finite differences
and runs are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ImageRgb, SoftLabel
from .losses import FeatureStack, LossWeights, loss_kd, loss_qc, loss_score
from .seeds import derive_rng

__all__ = [
    "TinyNet",
    "ProbeHead",
    "TrainResult",
    "TEACHER_SEED",
    "make_teacher",
    "qep_train",
    "linear_probe",
    "five_patch_predict",
    "weights_checksum",
    "save_weight_bundle",
    "load_weight_bundle",
]

STAGE_WIDTHS = (8, 16, 32)
HEAD_HIDDEN = 64
POOLED_DIM = STAGE_WIDTHS[-1]

# One teacher for every run: fixed-seed random weights standing in for a
# pretrained semantic model.
TEACHER_SEED = 7310932

KD_MODES = ("on", "off", "literal-sign")


def _init_params(n_types: int, n_levels: int, seed: int) -> dict[str, np.ndarray]:
    rng = derive_rng(seed, "tinynet-init")
    params: dict[str, np.ndarray] = {}
    c_in = 3
    for i, c_out in enumerate(STAGE_WIDTHS, start=1):
        scale = 1.0 / np.sqrt(c_in * 9)
        params[f"conv{i}_w"] = rng.normal(0.0, scale, size=(c_out, c_in, 3, 3))
        params[f"conv{i}_b"] = np.zeros(c_out)
        c_in = c_out
    for head, n_out in (("type", n_types + 1), ("level", n_levels + 1)):
        params[f"{head}_w1"] = rng.normal(0.0, 1.0 / np.sqrt(POOLED_DIM), size=(HEAD_HIDDEN, POOLED_DIM))
        params[f"{head}_b1"] = np.zeros(HEAD_HIDDEN)
        params[f"{head}_w2"] = rng.normal(0.0, 1.0 / np.sqrt(HEAD_HIDDEN), size=(n_out, HEAD_HIDDEN))
        params[f"{head}_b2"] = np.zeros(n_out)
    return params


def weights_checksum(params: dict[str, np.ndarray]) -> str:
    """SHA-256 over parameter names and little-endian float64 payloads."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) patch matrix for a padded 3x3 window."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, h, w))
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, dy : dy + h, dx : dx + w]
    return cols.reshape(c * 9, h * w)


def _col2im(d_cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add column gradients back to (C, H, W)."""
    d = d_cols.reshape(c, 3, 3, h, w)
    gxp = np.zeros((c, h + 2, w + 2))
    for dy in range(3):
        for dx in range(3):
            gxp[:, dy : dy + h, dx : dx + w] += d[:, dy, dx]
    return gxp[:, 1 : 1 + h, 1 : 1 + w]


def _stage_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, dict]:
    c_out = w.shape[0]
    h, wd = x.shape[1], x.shape[2]
    cols = _im2col(x)
    pre = (w.reshape(c_out, -1) @ cols + b[:, None]).reshape(c_out, h, wd)
    act = np.tanh(pre)
    out = act.reshape(c_out, h // 2, 2, wd // 2, 2).mean(axis=(2, 4))
    return out, {"cols": cols, "act": act, "x_shape": x.shape, "w": w}


def _stage_backward(d_out: np.ndarray, cache: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_w, d_b, d_x) for one conv-tanh-pool stage."""
    act = cache["act"]
    w = cache["w"]
    c_out, h, wd = act.shape
    d_act = np.repeat(np.repeat(d_out, 2, axis=1), 2, axis=2) / 4.0
    d_pre = d_act * (1.0 - act * act)
    d_pre_flat = d_pre.reshape(c_out, -1)
    d_w = (d_pre_flat @ cache["cols"].T).reshape(w.shape)
    d_b = d_pre_flat.sum(axis=1)
    d_cols = w.reshape(c_out, -1).T @ d_pre_flat
    c_in = cache["x_shape"][0]
    d_x = _col2im(d_cols, c_in, h, wd)
    return d_w, d_b, d_x


def _head_forward(params: dict, head: str, pooled: np.ndarray) -> tuple[np.ndarray, dict]:
    h1 = np.tanh(params[f"{head}_w1"] @ pooled + params[f"{head}_b1"])
    logits = params[f"{head}_w2"] @ h1 + params[f"{head}_b2"]
    return logits, {"h1": h1, "pooled": pooled}


def _head_backward(
    params: dict, head: str, d_logits: np.ndarray, cache: dict, grads: dict
) -> np.ndarray:
    h1 = cache["h1"]
    grads[f"{head}_w2"] += np.outer(d_logits, h1)
    grads[f"{head}_b2"] += d_logits
    d_h1 = params[f"{head}_w2"].T @ d_logits
    d_pre = d_h1 * (1.0 - h1 * h1)
    grads[f"{head}_w1"] += np.outer(d_pre, cache["pooled"])
    grads[f"{head}_b1"] += d_pre
    return params[f"{head}_w1"].T @ d_pre


@dataclass
class TinyNet:
    """Three-stage encoder plus type/level classification heads."""

    params: dict[str, np.ndarray]
    n_types: int
    n_levels: int
    frozen: bool = False

    @classmethod
    def init(cls, n_types: int, n_levels: int, seed: int, frozen: bool = False) -> "TinyNet":
        return cls(_init_params(n_types, n_levels, seed), n_types, n_levels, frozen)

    def checksum(self) -> str:
        return weights_checksum(self.params)

    def _check_input(self, img: ImageRgb) -> np.ndarray:
        if img.height % 8 or img.width % 8:
            raise ValueError(f"image {img.width}x{img.height} not a multiple of 8")
        # center on mid-gray; the raw common-mode offset otherwise dominates
        # early conv responses and stalls training for a long time
        return img.pixels.transpose(2, 0, 1) - 0.5

    def forward_features(self, img: ImageRgb) -> tuple[FeatureStack, np.ndarray, list[dict]]:
        """Stage features, pooled vector, and caches for backward."""
        x = self._check_input(img)
        caches = []
        outs = []
        for i in range(1, 4):
            x, cache = _stage_forward(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"])
            caches.append(cache)
            outs.append(x)
        pooled = outs[2].mean(axis=(1, 2))
        return FeatureStack(outs[0], outs[1], outs[2], source="student"), pooled, caches

    def pooled_features(self, img: ImageRgb) -> np.ndarray:
        _, pooled, _ = self.forward_features(img)
        return pooled

    def head_logits(self, pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict]:
        type_logits, tc = _head_forward(self.params, "type", pooled)
        level_logits, lc = _head_forward(self.params, "level", pooled)
        return type_logits, level_logits, {"type": tc, "level": lc}


def make_teacher(n_types: int, n_levels: int) -> TinyNet:
    return TinyNet.init(n_types, n_levels, TEACHER_SEED, frozen=True)


@dataclass
class TrainResult:
    student: TinyNet
    teacher: TinyNet
    epoch_losses: list[float] = field(default_factory=list)


def _sample_grads_and_loss(
    student: TinyNet,
    teacher: TinyNet,
    img: ImageRgb,
    label: SoftLabel,
    kd: str,
    w: LossWeights,
) -> tuple[float, dict[str, np.ndarray]]:
    stack, pooled, caches = student.forward_features(img)
    type_logits, level_logits, head_caches = student.head_logits(pooled)
    type_target, level_target = label.marginals()

    qc_t, d_type = loss_qc(type_logits, type_target)
    qc_l, d_level = loss_qc(level_logits, level_target)
    total = qc_t + qc_l

    grads = {name: np.zeros_like(p) for name, p in student.params.items()}
    d_pooled = _head_backward(student.params, "type", d_type, head_caches["type"], grads)
    d_pooled = d_pooled + _head_backward(
        student.params, "level", d_level, head_caches["level"], grads
    )
    f4 = stack.f4
    d_f4 = (d_pooled / (f4.shape[1] * f4.shape[2]))[:, None, None] * np.ones_like(f4)

    is_reference = label.probs[0] == 1.0
    d_f2 = d_f3 = None
    if kd != "off" and is_reference:
        t_stack, _, _ = teacher.forward_features(img)
        t_stack = FeatureStack(t_stack.f2, t_stack.f3, t_stack.f4, source="teacher")
        kd_val, (g2, g3, g4) = loss_kd(stack, t_stack, w, literal_distance=(kd == "literal-sign"))
        total += kd_val
        d_f4 = d_f4 + g4
        d_f2, d_f3 = g2, g3

    d_w, d_b, d_x = _stage_backward(d_f4, caches[2])
    grads["conv3_w"] += d_w
    grads["conv3_b"] += d_b
    if d_f3 is not None:
        d_x = d_x + d_f3
    d_w, d_b, d_x = _stage_backward(d_x, caches[1])
    grads["conv2_w"] += d_w
    grads["conv2_b"] += d_b
    if d_f2 is not None:
        d_x = d_x + d_f2
    d_w, d_b, _ = _stage_backward(d_x, caches[0])
    grads["conv1_w"] += d_w
    grads["conv1_b"] += d_b
    return total, grads


def qep_train(
    samples: Sequence[tuple[ImageRgb, SoftLabel]],
    epochs: int = 3,
    seed: int = 0,
    lr: float = 0.05,
    kd: str = "on",
    loss_weights: LossWeights = LossWeights(),
    teacher: TinyNet | None = None,
) -> TrainResult:
    """Classification pretraining on an augmented corpus.

    Per-sample SGD over seed-shuffled epochs.  The loss is the summed
    type/level soft cross-entropies plus, on reference rows only, the
    distillation term against the frozen teacher.  Rows count as
    reference when their label puts probability 1 on the reference
    class.
    """
    if not samples:
        raise ValueError("empty training corpus")
    if kd not in KD_MODES:
        raise ValueError(f"kd mode must be one of {KD_MODES}")
    space = samples[0][1].class_space
    n_types = len(space.dtype_names)
    n_levels = space.n_levels
    student = TinyNet.init(n_types, n_levels, seed)
    if teacher is None:
        teacher = make_teacher(n_types, n_levels)

    losses = []
    for epoch in range(epochs):
        order = derive_rng(seed, "qep-order", epoch).permutation(len(samples))
        epoch_loss = 0.0
        for idx in order:
            img, label = samples[idx]
            val, grads = _sample_grads_and_loss(student, teacher, img, label, kd, loss_weights)
            epoch_loss += val
            if lr != 0.0:
                for name, g in grads.items():
                    student.params[name] -= lr * g
        losses.append(epoch_loss / len(samples))
    return TrainResult(student=student, teacher=teacher, epoch_losses=losses)


@dataclass
class ProbeHead:
    """Linear regression head over the pooled encoder vector."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError(f"probe weights must be 1d, got shape {w.shape}")
        self.weights = w

    def predict(self, pooled: np.ndarray) -> float:
        return float(np.dot(self.weights, pooled) + self.bias)


def linear_probe(
    encoder: TinyNet,
    labeled: Sequence[tuple[ImageRgb, float]],
    epochs: int = 50,
    seed: int = 0,
    lr: float = 0.1,
) -> ProbeHead:
    """Train only a regression head on frozen-encoder features.

    Features are extracted once; the head minimizes the smooth-L1 score
    loss by per-sample SGD.  The encoder is read, never written.
    """
    if not labeled:
        raise ValueError("empty probe corpus")
    feats = np.stack([encoder.pooled_features(img) for img, _ in labeled])
    scores = np.array([s for _, s in labeled], dtype=np.float64)

    rng = derive_rng(seed, "probe-init")
    w = rng.normal(0.0, 0.01, size=feats.shape[1])
    b = 0.0
    for epoch in range(epochs):
        order = derive_rng(seed, "probe-order", epoch).permutation(len(labeled))
        for idx in order:
            pred = np.array([np.dot(w, feats[idx]) + b])
            _, g = loss_score(pred, scores[idx : idx + 1])
            w -= lr * g[0] * feats[idx]
            b -= lr * g[0]
    return ProbeHead(weights=w, bias=b)


def five_patch_predict(encoder: TinyNet, head: ProbeHead, img: ImageRgb, patch: int) -> float:
    """Mean predicted score over the four corner crops and the center crop."""
    h, w = img.height, img.width
    if h < patch or w < patch:
        raise ValueError(f"image {w}x{h} smaller than patch {patch}")
    origins = [
        (0, 0),
        (w - patch, 0),
        (0, h - patch),
        (w - patch, h - patch),
        ((w - patch) // 2, (h - patch) // 2),
    ]
    scores = []
    for x0, y0 in origins:
        crop = ImageRgb(img.pixels[y0 : y0 + patch, x0 : x0 + patch])
        scores.append(head.predict(encoder.pooled_features(crop)))
    return float(np.mean(scores))


def save_weight_bundle(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Flat little-endian float64 file plus a JSON sidecar with shapes."""
    path = Path(path)
    names = sorted(params)
    with open(path, "wb") as fh:
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    sidecar = {
        "dtype": "<f8",
        "shapes": {name: list(params[name].shape) for name in names},
        "checksum": weights_checksum(params),
    }
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weight_bundle(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    shapes = sidecar["shapes"]
    params: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        raw = fh.read()
    offset = 0
    for name in sorted(shapes):
        shape = tuple(shapes[name])
        count = int(np.prod(shape)) if shape else 1
        chunk = raw[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ValueError(f"{path}: truncated weight payload at {name}")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in weight payload")
    if weights_checksum(params) != sidecar["checksum"]:
        raise ValueError(f"{path}: checksum mismatch")
    return params
