"""Corpus generation, augmentation, and training runs on disk.

Layout of a distorted corpus (cmd: gen-distort):

    out/refs/{ref_id}.png        pristine references (8-bit)
    out/images/{sample_id}.png   one distorted image per (ref, type, level)
    out/dsms/{sample_id}.dsm     ground-truth DSM of that image
    out/manifest.jsonl           one line per distorted image

Layout of an augmented corpus (cmd: augment) is images/ + manifest.jsonl.

All content derives from (seed, sample identity), so reruns are
byte-identical and worker pools can split the id range freely.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ImageRgb,
    SampleManifest,
    SoftLabel,
    load_image,
    quantize8,
    read_manifest,
    save_image,
)
from .distortions import apply_distortion, default_class_space, list_distortions
from .losses import LossWeights
from .mixing import dsmix_sample
from .seeds import derive_rng, derive_seed
from .sensitivity import (
    DsmProvider,
    dsm_heatmap,
    fit_tiny_predictor,
    gt_dsm,
    predict_dsm,
    save_dsm,
)
from .training import (
    ProbeHead,
    TinyNet,
    TrainResult,
    five_patch_predict,
    linear_probe,
    load_weight_bundle,
    qep_train,
    save_weight_bundle,
)
from .metrics import plcc, srcc

__all__ = [
    "toy_quality_score",
    "gen_distorted",
    "recompute_dsms",
    "augment_corpus",
    "load_augmented",
    "load_labeled_singles",
    "build_provider",
    "save_predictor",
    "load_predictor",
    "train_predictor_from_corpus",
    "run_qep",
    "run_probe",
    "predict_scores",
    "encoder_from_bundle",
]


def toy_quality_score(level: int) -> float:
    """Synthetic quality target: 1 - level/5; references (level 0) score 1."""
    if not 0 <= level <= 5:
        raise ValueError(f"level {level} outside 0..5")
    return 1.0 - level / 5.0


def _chunks(n: int, jobs: int) -> list[range]:
    jobs = max(1, min(jobs, n)) if n else 1
    bounds = np.linspace(0, n, jobs + 1).astype(int)
    return [range(bounds[k], bounds[k + 1]) for k in range(jobs) if bounds[k] < bounds[k + 1]]


# ---------------------------------------------------------------------------
# distorted corpus


def _gen_rows_for_ref(
    out_dir: str,
    ref_id: str,
    types: tuple[str, ...],
    seed: int,
    p: int,
) -> list[dict]:
    out = Path(out_dir)
    space = default_class_space()
    ref = load_image(out / "refs" / f"{ref_id}.png")
    rows = []
    for dtype in types:
        for level in range(1, space.n_levels + 1):
            sid = f"{ref_id}__{dtype}-l{level}"
            child = derive_seed(seed, "distort", ref_id, dtype, level)
            dist = apply_distortion(ref, dtype, level, derive_rng(child, "noise"))
            dist = quantize8(dist)
            save_image(dist, out / "images" / f"{sid}.png")
            save_dsm(out / "dsms" / f"{sid}.dsm", gt_dsm(dist, ref, p))
            label = SoftLabel.one_hot(space.index_of(dtype, level), space)
            rows.append(
                SampleManifest(
                    sample_id=sid,
                    source_ids=(ref_id,),
                    mask_rects=(),
                    lambdas=(1.0,),
                    label=label,
                    seed=child,
                    distortion_meta=({"dtype": dtype, "level": level},),
                ).to_json_obj()
            )
    return rows


def gen_distorted(
    out_dir: str | Path,
    refs: Sequence[tuple[str, ImageRgb]],
    types: Sequence[str] = (),
    seed: int = 0,
    p: int = 8,
    jobs: int = 1,
) -> int:
    """Write the full (reference x type x level) distorted corpus.

    Returns the number of manifest rows written.  `types` empty means
    every known distortion type.
    """
    out = Path(out_dir)
    types = tuple(types) or list_distortions()
    known = set(list_distortions())
    for t in types:
        if t not in known:
            raise ValueError(f"unknown distortion type {t!r}")
    if not refs:
        raise ValueError("no reference images")
    for sub in ("refs", "images", "dsms"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for ref_id, img in refs:
        save_image(quantize8(img), out / "refs" / f"{ref_id}.png")

    args = [(str(out), ref_id, types, seed, p) for ref_id, _ in refs]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_ref = list(pool.map(_gen_rows_for_ref, *zip(*args)))
    else:
        per_ref = [_gen_rows_for_ref(*a) for a in args]

    rows = [row for rows_ in per_ref for row in rows_]
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")
    return len(rows)


def recompute_dsms(
    corpus_dir: str | Path,
    out_dir: str | Path,
    provider: DsmProvider,
    heatmaps: bool = False,
) -> int:
    """Recompute DSMs for every corpus image with the given provider."""
    corpus = Path(corpus_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for rec in read_manifest(corpus / "manifest.jsonl"):
        img = load_image(corpus / "images" / f"{rec.sample_id}.png")
        ref = None
        if provider.kind == "ground_truth":
            ref = load_image(corpus / "refs" / f"{rec.source_ids[0]}.png")
        dsm = predict_dsm(img, provider, ref)
        save_dsm(out / f"{rec.sample_id}.dsm", dsm)
        if heatmaps:
            save_image(dsm_heatmap(dsm, provider.patch_size), out / f"{rec.sample_id}.png")
        n += 1
    if n == 0:
        raise ValueError(f"{corpus}: empty manifest")
    return n


# ---------------------------------------------------------------------------
# augmentation


def _singles_pool(corpus: Path) -> list[dict]:
    """Candidate sources: every distorted image plus every reference.

    Each entry carries the image path, its reference path, and the
    one-hot class.  Reference entries are their own reference.
    """
    space = default_class_space()
    pool = []
    for rec in read_manifest(corpus / "manifest.jsonl"):
        meta = rec.distortion_meta[0]
        pool.append(
            {
                "id": rec.sample_id,
                "path": str(corpus / "images" / f"{rec.sample_id}.png"),
                "ref_path": str(corpus / "refs" / f"{rec.source_ids[0]}.png"),
                "class_index": space.index_of(meta["dtype"], meta["level"]),
            }
        )
    n_distorted = len(pool)
    for ref_png in sorted((corpus / "refs").glob("*.png")):
        pool.append(
            {
                "id": ref_png.stem,
                "path": str(ref_png),
                "ref_path": str(ref_png),
                "class_index": 0,
            }
        )
    if n_distorted == 0:
        raise ValueError(f"{corpus}: no distorted images in manifest")
    return pool


def _augment_shard(
    out_dir: str,
    pool: list[dict],
    n_distorted: int,
    indices: Sequence[int],
    seed: int,
    mix_max: int,
    provider: DsmProvider,
    area_labels: bool,
) -> list[dict]:
    out = Path(out_dir)
    space = default_class_space()
    rows = []
    for i in indices:
        rng = derive_rng(seed, "augment", i)
        mix = int(rng.integers(1, mix_max + 1))
        if mix == 1:
            picks = [int(rng.integers(0, len(pool)))]
        else:
            picks = [int(v) for v in rng.choice(n_distorted, size=mix, replace=False)]
        entries = [pool[k] for k in picks]
        sources = []
        refs = []
        for e in entries:
            img = load_image(e["path"])
            sources.append((img, SoftLabel.one_hot(e["class_index"], space)))
            refs.append(img if e["ref_path"] == e["path"] else load_image(e["ref_path"]))
        mixed, _, manifest = dsmix_sample(
            sources,
            provider,
            seed=derive_seed(seed, "sample", i),
            sample_id=f"aug-{i:06d}",
            source_ids=[e["id"] for e in entries],
            refs=refs,
            area_labels=area_labels,
        )
        save_image(quantize8(mixed), out / "images" / f"aug-{i:06d}.png")
        rows.append(manifest.to_json_obj())
    return rows


def augment_corpus(
    corpus_dir: str | Path,
    out_dir: str | Path,
    n_samples: int,
    provider: DsmProvider,
    mix_max: int = 3,
    seed: int = 0,
    label_mode: str = "dsm",
    jobs: int = 1,
) -> int:
    """Generate the cut-and-mix corpus from a distorted corpus.

    Mix is uniform over {1..mix_max}.  Single-source samples draw from
    distorted images and references alike (passing a reference through
    unchanged, which is what gives training its reference rows); mixed
    samples combine distinct distorted images.  `label_mode` "area"
    switches the label weights to plain area ratios for ablations.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not 1 <= mix_max <= 3:
        raise ValueError("mix_max must be in 1..3")
    if label_mode not in ("dsm", "area"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    corpus = Path(corpus_dir)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pool = _singles_pool(corpus)
    n_distorted = sum(1 for e in pool if e["class_index"] != 0)
    if mix_max > 1 and n_distorted < mix_max:
        raise ValueError("not enough distorted images to mix")

    shards = _chunks(n_samples, jobs)
    args = [
        (str(out), pool, n_distorted, list(r), seed, mix_max, provider, label_mode == "area")
        for r in shards
    ]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as poolex:
            per_shard = list(poolex.map(_augment_shard, *zip(*args)))
    else:
        per_shard = [_augment_shard(*a) for a in args]

    rows = [row for rows_ in per_shard for row in rows_]
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")
    return len(rows)


def load_augmented(corpus_dir: str | Path) -> list[tuple[ImageRgb, SoftLabel]]:
    corpus = Path(corpus_dir)
    samples = []
    for rec in read_manifest(corpus / "manifest.jsonl"):
        samples.append((load_image(corpus / "images" / f"{rec.sample_id}.png"), rec.label))
    if not samples:
        raise ValueError(f"{corpus}: empty manifest")
    return samples


def load_labeled_singles(corpus_dir: str | Path) -> list[tuple[str, ImageRgb, float]]:
    """(id, image, quality score) for every single-distortion image and reference."""
    corpus = Path(corpus_dir)
    labeled = []
    for rec in read_manifest(corpus / "manifest.jsonl"):
        level = rec.distortion_meta[0]["level"]
        img = load_image(corpus / "images" / f"{rec.sample_id}.png")
        labeled.append((rec.sample_id, img, toy_quality_score(level)))
    for ref_png in sorted((corpus / "refs").glob("*.png")):
        labeled.append((ref_png.stem, load_image(ref_png), toy_quality_score(0)))
    if not labeled:
        raise ValueError(f"{corpus}: nothing to label")
    return labeled


# ---------------------------------------------------------------------------
# providers and training runs


def save_predictor(path: str | Path, provider: DsmProvider) -> None:
    if provider.kind != "tiny_predictor" or provider.weights is None:
        raise ValueError("only trained tiny_predictor providers are saved")
    save_weight_bundle(path, {"patch_linear": provider.weights})


def load_predictor(path: str | Path) -> DsmProvider:
    params = load_weight_bundle(path)
    w = params["patch_linear"]
    p = int(round(np.sqrt((w.size - 1) / 3)))
    if 3 * p * p + 1 != w.size:
        raise ValueError(f"{path}: weight length {w.size} is not 3*p*p+1")
    return DsmProvider("tiny_predictor", patch_size=p, weights=w)


def build_provider(
    dsm_source: str,
    p: int,
    predictor_path: str | Path | None = None,
) -> DsmProvider:
    """Map the CLI-facing names gt/grad/pred to a provider."""
    if dsm_source == "gt":
        return DsmProvider("ground_truth", patch_size=p)
    if dsm_source == "grad":
        return DsmProvider("gradient_map", patch_size=p)
    if dsm_source == "pred":
        if predictor_path is None:
            raise ValueError("dsm_source 'pred' needs trained predictor weights")
        provider = load_predictor(predictor_path)
        if provider.patch_size != p:
            raise ValueError(
                f"predictor patch size {provider.patch_size} does not match requested {p}"
            )
        return provider
    raise ValueError(f"unknown dsm source {dsm_source!r}")


def train_predictor_from_corpus(
    corpus_dir: str | Path,
    p: int = 8,
    epochs: int = 200,
    lr: float = 0.05,
    seed: int = 0,
) -> DsmProvider:
    corpus = Path(corpus_dir)
    pairs = []
    for rec in read_manifest(corpus / "manifest.jsonl"):
        dist = load_image(corpus / "images" / f"{rec.sample_id}.png")
        ref = load_image(corpus / "refs" / f"{rec.source_ids[0]}.png")
        pairs.append((dist, ref))
    if not pairs:
        raise ValueError(f"{corpus}: empty manifest")
    return fit_tiny_predictor(pairs, p=p, epochs=epochs, lr=lr, seed=seed)


def run_qep(
    corpus_dir: str | Path,
    out_dir: str | Path,
    epochs: int = 3,
    lr: float = 0.05,
    kd: str = "on",
    seed: int = 0,
    loss_weights: LossWeights = LossWeights(),
) -> TrainResult:
    """Train the encoder on an augmented corpus and save the bundles."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_augmented(corpus_dir)
    result = qep_train(samples, epochs=epochs, seed=seed, lr=lr, kd=kd, loss_weights=loss_weights)
    save_weight_bundle(out / "student.bin", result.student.params)
    save_weight_bundle(out / "teacher.bin", result.teacher.params)
    log = {
        "epoch_losses": result.epoch_losses,
        "epochs": epochs,
        "kd": kd,
        "lr": lr,
        "seed": seed,
        "n_samples": len(samples),
    }
    with open(out / "train_log.json", "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def encoder_from_bundle(path: str | Path, frozen: bool = True) -> TinyNet:
    params = load_weight_bundle(path)
    n_types = params["type_w2"].shape[0] - 1
    n_levels = params["level_w2"].shape[0] - 1
    return TinyNet(params, n_types=n_types, n_levels=n_levels, frozen=frozen)


def run_probe(
    encoder_path: str | Path,
    corpus_dir: str | Path,
    out_dir: str | Path,
    epochs: int = 50,
    lr: float = 0.1,
    seed: int = 0,
    train_frac: float = 0.8,
) -> dict:
    """Linear-probe a frozen encoder on the toy quality task.

    Splits the labeled singles by seed, trains the head on the train
    part, and reports held-out SRCC/PLCC.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    encoder = encoder_from_bundle(encoder_path, frozen=True)
    labeled = load_labeled_singles(corpus_dir)
    order = derive_rng(seed, "probe-split").permutation(len(labeled))
    n_train = int(round(train_frac * len(labeled)))
    if n_train < 1 or n_train >= len(labeled):
        raise ValueError("split leaves an empty train or test set")
    train = [(labeled[i][1], labeled[i][2]) for i in order[:n_train]]
    test = [labeled[i] for i in order[n_train:]]

    head = linear_probe(encoder, train, epochs=epochs, seed=seed, lr=lr)
    gt = np.array([score for _, _, score in test])
    pred = np.array([head.predict(encoder.pooled_features(img)) for _, img, _ in test])
    report = {
        "srcc": srcc(gt, pred),
        "plcc": plcc(gt, pred),
        "n_train": n_train,
        "n_test": len(test),
        "seed": seed,
    }
    save_weight_bundle(out / "probe.bin", {"probe_w": head.weights, "probe_b": np.array([head.bias])})
    with open(out / "probe_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def predict_scores(
    encoder_path: str | Path,
    probe_path: str | Path,
    image_paths: Sequence[str | Path],
    patch: int | None = None,
) -> list[tuple[str, float]]:
    """Five-patch quality scores for a list of images.

    Default patch is the largest multiple of 8 fitting the first image,
    so a patch-sized input reduces to a single-crop prediction.
    """
    encoder = encoder_from_bundle(encoder_path, frozen=True)
    params = load_weight_bundle(probe_path)
    head = ProbeHead(weights=params["probe_w"], bias=float(params["probe_b"][0]))
    results = []
    for path in image_paths:
        img = load_image(path)
        use = patch if patch is not None else (min(img.width, img.height) // 8) * 8
        results.append((str(path), five_patch_predict(encoder, head, img, use)))
    return results
