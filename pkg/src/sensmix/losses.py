"""Training objectives with analytic gradients.

Every loss here returns (value, gradient) so the hand-written training
loops can backpropagate without an autodiff framework, and so the
gradients can be checked against central finite differences.

Sign convention for the distillation term: the combined objective is
lambda1 * L_FR - lambda2 * L_CD with L_CD the cosine SIMILARITY of the
pooled final-stage features, so minimizing it pulls student features
toward the teacher.  The variant that subtracts the cosine DISTANCE
instead (which pushes them apart) is kept behind `literal_distance`
for side-by-side comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SoftLabel

__all__ = [
    "FeatureStack",
    "LossWeights",
    "loss_ds",
    "loss_qc",
    "loss_kd",
    "kd_terms",
    "loss_quality",
    "loss_score",
]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class FeatureStack:
    """Per-stage feature maps (channels, h, w) from one model."""

    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray
    source: str = "student"

    def __post_init__(self):
        if self.source not in ("student", "teacher"):
            raise ValueError(f"unknown source {self.source!r}")
        for name in ("f2", "f3", "f4"):
            f = np.asarray(getattr(self, name), dtype=np.float64)
            if f.ndim != 3:
                raise ValueError(f"{name} must be (channels, h, w), got shape {f.shape}")
            if not np.all(np.isfinite(f)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, f)

    def stages(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.f2, self.f3, self.f4


def loss_ds(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE over sensitivity grids; gradient is 2 (pred - gt) / N."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"grid shapes differ: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty grids")
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_qc(logits: np.ndarray, target: SoftLabel | np.ndarray) -> tuple[float, np.ndarray]:
    """Soft-target cross-entropy; gradient is softmax(logits) - target.

    Stabilized through log-sum-exp, so extreme logits stay finite.
    """
    logits = np.asarray(logits, dtype=np.float64)
    probs = target.probs if isinstance(target, SoftLabel) else np.asarray(target, dtype=np.float64)
    if logits.ndim != 1 or logits.shape != probs.shape:
        raise ValueError(f"logits shape {logits.shape} does not match target {probs.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    m = logits.max()
    shifted = logits - m
    lse = m + np.log(np.exp(shifted).sum())
    loss = float(lse - np.dot(probs, logits))
    softmax = np.exp(shifted)
    softmax /= softmax.sum()
    return loss, softmax - probs


def _pooled_cosine(s4: np.ndarray, t4: np.ndarray) -> tuple[float, np.ndarray]:
    """Cosine similarity of globally average-pooled features.

    Returns (similarity, d similarity / d s4).
    """
    hw = s4.shape[1] * s4.shape[2]
    a = s4.mean(axis=(1, 2))
    b = t4.mean(axis=(1, 2))
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm pooled feature vector, cosine undefined")
    sim = float(np.dot(a, b) / (na * nb))
    d_a = b / (na * nb) - sim * a / (na * na)
    return sim, (d_a / hw)[:, None, None] * np.ones_like(s4)


def kd_terms(student: FeatureStack, teacher: FeatureStack) -> tuple[float, float]:
    """(L_FR, L_CD): stagewise MAE over stages 2,3 and pooled stage-4 cosine."""
    for s, t in zip(student.stages(), teacher.stages()):
        if s.shape != t.shape:
            raise ValueError(f"stage shapes differ: {s.shape} vs {t.shape}")
    fr = float(np.mean(np.abs(student.f2 - teacher.f2)))
    fr += float(np.mean(np.abs(student.f3 - teacher.f3)))
    cd, _ = _pooled_cosine(student.f4, teacher.f4)
    return fr, cd


def loss_kd(
    student: FeatureStack,
    teacher: FeatureStack,
    w: LossWeights = LossWeights(),
    literal_distance: bool = False,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Distillation loss and its gradient w.r.t. the student stages.

    Default: lambda1 * L_FR - lambda2 * cosine_similarity.  With
    `literal_distance` the last term becomes the cosine distance
    1 - similarity instead.  MAE subgradient at exact zeros is 0.
    """
    for s, t in zip(student.stages(), teacher.stages()):
        if s.shape != t.shape:
            raise ValueError(f"stage shapes differ: {s.shape} vs {t.shape}")
    grads = []
    fr = 0.0
    for s, t in (
        (student.f2, teacher.f2),
        (student.f3, teacher.f3),
    ):
        diff = s - t
        fr += float(np.mean(np.abs(diff)))
        grads.append(w.lambda1 * np.sign(diff) / diff.size)
    sim, d_sim = _pooled_cosine(student.f4, teacher.f4)
    if literal_distance:
        total = w.lambda1 * fr - w.lambda2 * (1.0 - sim)
        grads.append(w.lambda2 * d_sim)
    else:
        total = w.lambda1 * fr - w.lambda2 * sim
        grads.append(-w.lambda2 * d_sim)
    return total, (grads[0], grads[1], grads[2])


def loss_quality(
    logits: np.ndarray,
    target: SoftLabel | np.ndarray,
    student: FeatureStack | None,
    teacher: FeatureStack | None,
    is_reference: bool,
    w: LossWeights = LossWeights(),
    literal_distance: bool = False,
) -> float:
    """Classification loss plus distillation on reference images only."""
    qc, _ = loss_qc(logits, target)
    if not is_reference:
        return qc
    if student is None or teacher is None:
        raise ValueError("reference rows need student and teacher features")
    kd, _ = loss_kd(student, teacher, w, literal_distance)
    return qc + kd


def loss_score(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Smooth-L1 regression loss over score vectors.

    Per element: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise; both branches
    meet at |d| = 1 with matching value and slope.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValueError(f"score vectors must be equal-length 1d, got {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty score vectors")
    d = pred - gt
    absd = np.abs(d)
    inner = absd < 1.0
    vals = np.where(inner, 0.5 * d * d, absd - 0.5)
    grad = np.where(inner, d, np.sign(d)) / d.size
    return float(vals.mean()), grad
