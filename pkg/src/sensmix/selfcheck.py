"""Built-in oracle and gradient checks, runnable from the CLI.

Each check has a stable id and returns a one-line detail string; a
failure is any raised AssertionError (or other exception).  The suite
is a quick release gate, not a replacement for the test suite: it uses
small fixed seeds and finishes in a few seconds.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np

from .core import ImageRgb, ClassSpace, SoftLabel, load_image, save_image
from .distortions import count_degradation_space, default_class_space
from .losses import FeatureStack, LossWeights, loss_ds, loss_kd, loss_qc, loss_score
from .metrics import plcc, srcc
from .mixing import RegionMap, assign_lambdas, dsmix_sample
from .seeds import derive_rng
from .sensitivity import DsmProvider, gt_dsm, upsample_bilinear

__all__ = ["CheckResult", "run_all", "CHECK_IDS"]


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    passed: bool
    detail: str


def _fd_grad(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def _max_rel_err(analytic: np.ndarray, fd: np.ndarray, mask: np.ndarray | None = None) -> float:
    a = analytic.ravel()
    b = fd.ravel()
    keep = np.ones(a.size, dtype=bool) if mask is None else mask.ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    errs = np.abs(a - b) / denom
    return float(errs[keep].max()) if keep.any() else 0.0


def check_png_roundtrip() -> str:
    rng = derive_rng(11, "selfcheck-png")
    px = rng.integers(0, 256, size=(24, 32, 3)) / 255.0
    img = ImageRgb(px)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.png"
        save_image(img, path)
        back = load_image(path)
    assert np.array_equal(img.pixels, back.pixels), "png round-trip not lossless"
    return "8-bit png round-trip is lossless"


def check_gt_dsm_oracle() -> str:
    rng = derive_rng(12, "selfcheck-dsm")
    p = 8
    for trial in range(3):
        a = rng.integers(0, 257, size=(32, 32, 3)) / 256.0
        b = rng.integers(0, 257, size=(32, 32, 3)) / 256.0
        got = gt_dsm(ImageRgb(a), ImageRgb(b), p)
        for i in range(4):
            for j in range(4):
                total = 0.0
                for y in range(i * p, (i + 1) * p):
                    for x in range(j * p, (j + 1) * p):
                        for c in range(3):
                            total += abs(a[y, x, c] - b[y, x, c])
                want = total / (p * p * 3)
                assert got[i, j] == want, f"cell ({i},{j}) differs at 64-bit"
    ref = ImageRgb(np.full((16, 16, 3), 0.5))
    dist_px = np.full((16, 16, 3), 0.5)
    dist_px[:8, :8] = 0.9
    grid = gt_dsm(ImageRgb(dist_px), ref, 8)
    assert grid[0, 0] == 0.4 and grid[0, 1] == 0.0, "indicator block not exact"
    return "matches per-pixel oracle exactly; block example exact"


def check_upsample_constant() -> str:
    grid = np.full((3, 5), 0.37)
    full = upsample_bilinear(grid, 8)
    assert full.shape == (24, 40)
    assert np.all(full == 0.37), "constant grid must upsample to constant"
    return "constant grid stays exactly constant"


def check_lambda_bruteforce() -> str:
    rng = derive_rng(13, "selfcheck-lambda")
    worst = 0.0
    for trial in range(50):
        h, w = int(rng.integers(4, 24)), int(rng.integers(4, 24))
        n = int(rng.integers(2, 4))
        owner = rng.integers(0, n, size=(h, w))
        dsm = rng.uniform(0.0, 1.0, size=(h, w))
        if trial % 10 == 0:
            dsm[:] = 0.0
        got = assign_lambdas(dsm, RegionMap(owner, n))
        sums = [0.0] * n
        for y in range(h):
            for x in range(w):
                sums[owner[y, x]] += dsm[y, x]
        total = sum(sums)
        if total > 0:
            want = [s / total for s in sums]
        else:
            counts = [0] * n
            for y in range(h):
                for x in range(w):
                    counts[owner[y, x]] += 1
            want = [c / (h * w) for c in counts]
        worst = max(worst, max(abs(g - e) for g, e in zip(got, want)))
    assert worst <= 1e-9, f"lambda mismatch vs brute force: {worst:.3e}"
    return f"max abs err vs brute force {worst:.2e}"


def check_label_scatter() -> str:
    space = default_class_space()
    rng = derive_rng(14, "selfcheck-scatter")
    provider = DsmProvider("gradient_map", patch_size=8)
    img_a = ImageRgb(rng.uniform(0, 1, size=(32, 32, 3)))
    img_b = ImageRgb(rng.uniform(0, 1, size=(32, 32, 3)))
    la = SoftLabel.one_hot(3, space)
    lb = SoftLabel.one_hot(17, space)
    _, label, manifest = dsmix_sample([(img_a, la), (img_b, lb)], provider, seed=99)
    assert label.probs[3] == manifest.lambdas[0], "lambda not scattered to class 3"
    assert label.probs[17] == manifest.lambdas[1], "lambda not scattered to class 17"
    assert abs(sum(manifest.lambdas) - 1.0) <= 1e-9
    return "mixed label entries equal the lambda vector"


def check_grad_ds() -> str:
    rng = derive_rng(15, "selfcheck-grad-ds")
    worst = 0.0
    for _ in range(20):
        pred = rng.normal(size=(3, 4))
        gt = rng.normal(size=(3, 4))
        _, g = loss_ds(pred, gt)
        fd = _fd_grad(lambda: loss_ds(pred, gt)[0], pred)
        worst = max(worst, _max_rel_err(g, fd))
    assert worst < 1e-4, f"loss_ds gradient rel err {worst:.3e}"
    return f"max rel err {worst:.2e}"


def check_grad_qc() -> str:
    rng = derive_rng(16, "selfcheck-grad-qc")
    worst = 0.0
    for _ in range(20):
        logits = rng.normal(scale=2.0, size=7)
        t = rng.uniform(0.1, 1.0, size=7)
        t /= t.sum()
        _, g = loss_qc(logits, t)
        fd = _fd_grad(lambda: loss_qc(logits, t)[0], logits)
        worst = max(worst, _max_rel_err(g, fd))
    assert worst < 1e-4, f"loss_qc gradient rel err {worst:.3e}"
    return f"max rel err {worst:.2e}"


def check_grad_kd() -> str:
    rng = derive_rng(17, "selfcheck-grad-kd")
    w = LossWeights()
    worst = 0.0
    for _ in range(20):
        t2, t3, t4 = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 2)), rng.normal(size=(4, 2, 2))
        s2 = t2 + rng.choice([-1, 1], size=t2.shape) * rng.uniform(1e-3, 0.5, size=t2.shape)
        s3 = t3 + rng.choice([-1, 1], size=t3.shape) * rng.uniform(1e-3, 0.5, size=t3.shape)
        s4 = rng.normal(size=(4, 2, 2))
        teacher = FeatureStack(t2, t3, t4, source="teacher")

        def total() -> float:
            return loss_kd(FeatureStack(s2, s3, s4), teacher, w)[0]

        _, (g2, g3, g4) = loss_kd(FeatureStack(s2, s3, s4), teacher, w)
        for s, g in ((s2, g2), (s3, g3), (s4, g4)):
            fd = _fd_grad(total, s)
            worst = max(worst, _max_rel_err(g, fd))
    assert worst < 1e-4, f"loss_kd gradient rel err {worst:.3e}"
    return f"max rel err {worst:.2e} (inputs kept off the MAE kinks)"


def check_grad_score() -> str:
    rng = derive_rng(18, "selfcheck-grad-score")
    worst = 0.0
    for _ in range(20):
        gt = rng.normal(size=6)
        d = rng.choice([-1, 1], size=6) * rng.uniform(0.05, 2.5, size=6)
        d = np.where(np.abs(np.abs(d) - 1.0) < 1e-3, d * 1.1, d)
        pred = gt + d
        _, g = loss_score(pred, gt)
        fd = _fd_grad(lambda: loss_score(pred, gt)[0], pred)
        worst = max(worst, _max_rel_err(g, fd))
    assert worst < 1e-4, f"loss_score gradient rel err {worst:.3e}"
    return f"max rel err {worst:.2e}"


def check_qc_uniform() -> str:
    space = ClassSpace(("a", "b", "c"), 1)
    target = SoftLabel(np.array([0.5, 0.25, 0.125, 0.125]), space)
    val, _ = loss_qc(np.zeros(4), target)
    assert abs(val - math.log(4)) <= 1e-9, f"uniform-logit loss {val!r} != ln 4"
    big, _ = loss_qc(np.array([1e4, 0.0, 0.0, 0.0]), target)
    assert math.isfinite(big), "overflow in stabilized cross-entropy"
    return "uniform logits give ln C; 1e4 logits stay finite"


def check_srcc_examples() -> str:
    assert srcc([1, 2, 3, 4], [1, 2, 4, 3]) == 0.8, "worked example must be exact"
    assert srcc([1, 2, 3], [3, 2, 1]) == -1.0, "full reversal must be exact"
    return "worked example exact (0.8), reversal exact (-1)"


def check_plcc_oracle() -> str:
    rng = derive_rng(19, "selfcheck-plcc")
    worst = 0.0
    for _ in range(50):
        u = rng.normal(size=200)
        v = 0.4 * u + rng.normal(size=200)
        worst = max(worst, abs(plcc(u, v) - float(np.corrcoef(u, v)[0, 1])))
    assert worst <= 1e-12, f"plcc differs from corrcoef oracle by {worst:.3e}"
    return f"max abs err vs corrcoef {worst:.2e}"


def check_count_space() -> str:
    for slots in range(1, 6):
        brute = 0
        for k in range(1, slots + 1):
            brute += sum(1 for _ in permutations(range(slots), k))
        assert brute == count_degradation_space(slots), f"enumeration mismatch at {slots}"
    total = count_degradation_space(9)
    assert total == 986_409, f"9-slot count {total} != 986,409"
    return "enumeration matches formula; 9 slots -> 986,409"


def check_seed_streams() -> str:
    a = derive_rng(5, "stream").integers(0, 2**32, size=4)
    b = derive_rng(5, "stream").integers(0, 2**32, size=4)
    c = derive_rng(5, "other").integers(0, 2**32, size=4)
    assert np.array_equal(a, b), "same path must replay identically"
    assert not np.array_equal(a, c), "sibling paths must differ"
    return "streams replay identically and siblings differ"


CHECKS = (
    ("core.png.roundtrip", check_png_roundtrip),
    ("dsm.gt.oracle", check_gt_dsm_oracle),
    ("dsm.upsample.constant", check_upsample_constant),
    ("dsmix.lambda.bruteforce", check_lambda_bruteforce),
    ("dsmix.label.scatter", check_label_scatter),
    ("losses.grad.ds", check_grad_ds),
    ("losses.grad.qc", check_grad_qc),
    ("losses.grad.kd", check_grad_kd),
    ("losses.grad.score", check_grad_score),
    ("losses.qc.uniform", check_qc_uniform),
    ("metrics.srcc.examples", check_srcc_examples),
    ("metrics.plcc.oracle", check_plcc_oracle),
    ("combinatorics.count", check_count_space),
    ("seeds.streams", check_seed_streams),
)

CHECK_IDS = tuple(cid for cid, _ in CHECKS)


def run_all() -> list[CheckResult]:
    results = []
    for check_id, fn in CHECKS:
        try:
            detail = fn()
            results.append(CheckResult(check_id, True, detail))
        except Exception as exc:
            results.append(CheckResult(check_id, False, str(exc)))
    return results
