"""Command-line pipeline driver.

Subcommands mirror the pipeline stages: gen-distort, gen-dsm, augment,
train-dsm-predictor, train-qep, probe, predict, eval, count-space, and
selfcheck.  Every command resolves RunConfig from defaults, an optional
--config file, and flags (in that order), and commands with an output
directory write the resolved snapshot next to their artifacts.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 selfcheck
failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import RunConfig
from .core import crop_to_multiple, load_image
from .distortions import count_degradation_space
from .losses import LossWeights
from .metrics import plcc, srcc
from .selfcheck import run_all
from .synth import make_reference_set

__all__ = ["main", "build_parser"]


def _resolve(args: argparse.Namespace, **overrides) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.replace(**overrides)


def _load_refs_dir(path: Path, multiple: int) -> list:
    if not path.is_dir():
        raise OSError(f"reference directory {path} does not exist")
    refs = []
    for png in sorted(path.glob("*.png")):
        refs.append((png.stem, crop_to_multiple(load_image(png), multiple)))
    if not refs:
        raise ValueError(f"no .png references in {path}")
    return refs


def cmd_gen_distort(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        seed=args.seed,
        patch_size=args.patch_size,
        image_size=args.image_size,
        jobs=args.jobs,
        distortions=tuple(args.distortions.split(",")) if args.distortions else None,
    )
    if args.synth_refs is not None:
        if args.synth_refs < 1:
            raise ValueError("--synth-refs must be >= 1")
        refs = make_reference_set(args.synth_refs, cfg.seed, cfg.image_size)
    elif args.refs:
        multiple = math.lcm(8, cfg.patch_size)
        refs = _load_refs_dir(Path(args.refs), multiple)
    else:
        raise ValueError("pass --refs DIR or --synth-refs N")
    n = pipeline.gen_distorted(
        args.out, refs, cfg.distortions, seed=cfg.seed, p=cfg.patch_size, jobs=cfg.jobs
    )
    cfg.write_snapshot(args.out)
    print(f"wrote {n} distorted images ({len(refs)} references) to {args.out}")
    return 0


def cmd_gen_dsm(args: argparse.Namespace) -> int:
    cfg = _resolve(args, patch_size=args.patch_size, dsm_source=args.dsm)
    provider = pipeline.build_provider(cfg.dsm_source, cfg.patch_size, args.weights)
    n = pipeline.recompute_dsms(args.corpus, args.out, provider, heatmaps=args.heatmaps)
    cfg.write_snapshot(args.out)
    print(f"wrote {n} sensitivity maps ({cfg.dsm_source}) to {args.out}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        seed=args.seed,
        patch_size=args.patch_size,
        mix_max=args.mix_max,
        dsm_source=args.dsm,
        label_mode=args.labels,
        n_samples=args.samples,
        jobs=args.jobs,
    )
    if cfg.label_mode == "area":
        provider = pipeline.build_provider("grad", cfg.patch_size)  # unused by area labels
    else:
        provider = pipeline.build_provider(cfg.dsm_source, cfg.patch_size, args.weights)
    n = pipeline.augment_corpus(
        args.corpus,
        args.out,
        cfg.n_samples,
        provider,
        mix_max=cfg.mix_max,
        seed=cfg.seed,
        label_mode=cfg.label_mode,
        jobs=cfg.jobs,
    )
    cfg.write_snapshot(args.out)
    print(f"wrote {n} augmented samples to {args.out}")
    return 0


def cmd_train_dsm_predictor(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        seed=args.seed,
        patch_size=args.patch_size,
        predictor_epochs=args.epochs,
        predictor_lr=args.lr,
    )
    provider = pipeline.train_predictor_from_corpus(
        args.corpus,
        p=cfg.patch_size,
        epochs=cfg.predictor_epochs,
        lr=cfg.predictor_lr,
        seed=cfg.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.save_predictor(out / "predictor.bin", provider)
    cfg.write_snapshot(out)
    print(f"wrote predictor weights to {out / 'predictor.bin'}")
    return 0


def cmd_train_qep(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        seed=args.seed,
        qep_epochs=args.epochs,
        qep_lr=args.lr,
        kd=args.kd,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
    )
    result = pipeline.run_qep(
        args.corpus,
        args.out,
        epochs=cfg.qep_epochs,
        lr=cfg.qep_lr,
        kd=cfg.kd,
        seed=cfg.seed,
        loss_weights=LossWeights(cfg.lambda1, cfg.lambda2),
    )
    cfg.write_snapshot(args.out)
    losses = result.epoch_losses
    print(f"trained encoder for {len(losses)} epochs; saved to {args.out}")
    if losses:
        drop = 0.0 if losses[0] == 0 else 100.0 * (losses[0] - losses[-1]) / abs(losses[0])
        print(f"mean loss {losses[0]:.4f} -> {losses[-1]:.4f} ({drop:.1f}% decrease)")
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        seed=args.seed,
        probe_epochs=args.epochs,
        probe_lr=args.lr,
        probe_train_frac=args.train_frac,
    )
    report = pipeline.run_probe(
        args.encoder,
        args.corpus,
        args.out,
        epochs=cfg.probe_epochs,
        lr=cfg.probe_lr,
        seed=cfg.seed,
        train_frac=cfg.probe_train_frac,
    )
    cfg.write_snapshot(args.out)
    print(f"probe on {report['n_train']} train / {report['n_test']} held-out images")
    print(f"SRCC {report['srcc']:.6f}")
    print(f"PLCC {report['plcc']:.6f}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    rows = pipeline.predict_scores(args.encoder, args.probe, args.images, patch=args.patch)
    print("image,score")
    for path, score in rows:
        print(f"{path},{score:.6f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    with open(args.csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{args.csv}: need a header row and at least one data row")
    header = rows[0]
    if len(header) < 2:
        raise ValueError(f"{args.csv}: need two columns (gt, pred)")
    try:
        float(header[0])
    except ValueError:
        pass
    else:
        raise ValueError(f"{args.csv}: header row is required")
    try:
        gt = np.array([float(r[0]) for r in rows[1:]])
        pred = np.array([float(r[1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{args.csv}: bad data row ({exc})") from exc
    print(f"SRCC {srcc(gt, pred):.6f}")
    print(f"PLCC {plcc(gt, pred):.6f}")
    return 0


def cmd_count_space(args: argparse.Namespace) -> int:
    slots = args.slots
    total = count_degradation_space(slots, include_empty=args.include_empty)
    print(f"slots: {slots}")
    print(f"ordered non-repeating distortion chains: {total:,}")
    if slots == 9:
        ratio = 2e6 / total
        print(
            "note: the often-quoted ballpark of ~2x10^6 for 9 slots overstates "
            f"the exact count by about {ratio:.2f}x"
        )
    return 0


def cmd_selfcheck(args: argparse.Namespace) -> int:
    results = run_all()
    width = max(len(r.check_id) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.check_id:<{width}}  {status}  {r.detail}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 4


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensmix",
        description="Sensitivity-weighted cut-and-mix augmentation and evaluation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-distort", help="generate the distorted corpus from references")
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--refs", help="directory of reference .png files")
    p.add_argument("--synth-refs", type=int, help="generate N procedural references instead")
    p.add_argument("--distortions", help="comma-separated distortion subset")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_gen_distort)

    p = sub.add_parser("gen-dsm", help="recompute sensitivity maps for a corpus")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True, help="distorted corpus directory")
    p.add_argument("--out", required=True, help="output directory for .dsm files")
    p.add_argument("--dsm", choices=("gt", "grad", "pred"))
    p.add_argument("--weights", help="predictor bundle (required for --dsm pred)")
    p.add_argument("--heatmaps", action="store_true", help="also write PNG heatmaps")
    p.add_argument("--patch-size", type=int)
    p.set_defaults(func=cmd_gen_dsm)

    p = sub.add_parser("augment", help="generate the cut-and-mix corpus")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True, help="distorted corpus directory")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--samples", type=int, help="number of augmented samples")
    p.add_argument("--mix-max", type=int, choices=(1, 2, 3))
    p.add_argument("--dsm", choices=("gt", "grad", "pred"))
    p.add_argument("--weights", help="predictor bundle (required for --dsm pred)")
    p.add_argument("--labels", choices=("dsm", "area"), help="label weighting mode")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-dsm-predictor", help="fit the tiny patch-linear DSM predictor")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True, help="distorted corpus directory")
    p.add_argument("--out", required=True, help="output directory for the bundle")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--patch-size", type=int)
    p.set_defaults(func=cmd_train_dsm_predictor)

    p = sub.add_parser("train-qep", help="pretrain the encoder on an augmented corpus")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True, help="augmented corpus directory")
    p.add_argument("--out", required=True, help="output directory for weight bundles")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--kd", choices=("on", "off", "literal-sign"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_qep)

    p = sub.add_parser("probe", help="linear-probe a frozen encoder on the toy quality task")
    _add_config_arg(p)
    p.add_argument("--encoder", required=True, help="student weight bundle (student.bin)")
    p.add_argument("--corpus", required=True, help="distorted corpus directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--train-frac", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("predict", help="score images with a trained encoder + probe")
    p.add_argument("--encoder", required=True)
    p.add_argument("--probe", required=True, help="probe bundle (probe.bin)")
    p.add_argument("--patch", type=int, help="crop size (default: largest multiple of 8)")
    p.add_argument("images", nargs="+", help="image files to score")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="SRCC/PLCC from a two-column CSV (header required)")
    p.add_argument("csv", help="CSV file with columns gt, pred")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count-space", help="size of the ordered distortion-chain space")
    p.add_argument("--slots", type=int, default=9)
    p.add_argument("--include-empty", action="store_true",
                   help="count the empty chain as well")
    p.set_defaults(func=cmd_count_space)

    p = sub.add_parser("selfcheck", help="run the built-in oracle and gradient checks")
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
