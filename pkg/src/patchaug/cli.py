"""Command-line entry point.

    patchaug experiment --config run.cfg --seed 3 --out runs/a --deterministic
    patchaug synth-data --config run.cfg --out data/synth
    patchaug train-gan --config run.cfg --out runs/gan
    patchaug train-classifier --config run.cfg --out runs/clf
    patchaug fid --config run.cfg --generator runs/gan/gan_class1_generator.galc --label 1
    patchaug augment --config run.cfg --generator 0=g0.galc --generator 1=g1.galc --out runs/aug

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import evaluate, train_classifier, write_curve_csv
from .config import ExperimentConfig, load_config
from .data import LABELS, augment, export_dataset, write_manifest
from .errors import ConfigError, DataError, NumericError, PatchAugError, StorageError
from .gan import sample, train_gan, write_log_csv
from .metrics import PENULTIMATE, FeatureExtractor, fid_from_images
from .pipeline import (
    StageError,
    cmd_experiment,
    gan_classes,
    load_dataset,
    split_dataset,
    stage_seed,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (StorageError, OSError)):
        return EXIT_IO
    raise exc


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, out_dir=args.out)


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def run_experiment(args) -> None:
    cfg = _config(args)
    cmd_experiment(cfg, deterministic=args.deterministic)
    print((Path(cfg.out_dir) / "report.txt").read_text(encoding="utf-8"), end="")


def run_synth_data(args) -> None:
    cfg = _config(args)
    if cfg.data_root:
        raise ConfigError("synth-data needs a synthetic spec, but data.root is set")
    ds, label = load_dataset(cfg)
    export_dataset(ds, _out(cfg))
    print(f"wrote {len(ds)} patches ({label}) to {cfg.out_dir}")


def _split(cfg: ExperimentConfig):
    ds, _ = load_dataset(cfg)
    return split_dataset(cfg, ds)


def run_train_gan(args) -> None:
    cfg = _config(args)
    out = _out(cfg)
    f_o, _ = _split(cfg)
    labels = [args.label] if args.label is not None else gan_classes(cfg, f_o)
    for c in labels:
        gcfg = replace(cfg.gan, seed=stage_seed(cfg.seed, f"gan/class{c}"))
        g, d, entries = train_gan(f_o.of_class(c).images, gcfg)
        save_checkpoint(g, out / f"gan_class{c}_generator.galc")
        save_checkpoint(d, out / f"gan_class{c}_discriminator.galc")
        write_log_csv(entries, out / f"gan_class{c}_log.csv")
        last = entries[-1] if entries else None
        tail = f", final mean D(G(z)) {last.mean_d_fake:.3f}" if last else ""
        print(f"class {c}: {gcfg.steps} generator steps{tail}")


def run_train_classifier(args) -> None:
    cfg = _config(args)
    out = _out(cfg)
    f_o, test = _split(cfg)
    model, curve = train_classifier(f_o, replace(cfg.classifier, seed=stage_seed(cfg.seed, "classifier")))
    save_checkpoint(model, out / "classifier.galc")
    write_curve_csv(curve, out / "classifier_curve.csv")
    print(f"held-out accuracy {100.0 * evaluate(model, test):.2f}%")


def run_fid(args) -> None:
    cfg = _config(args)
    f_o, _ = _split(cfg)
    real = f_o.of_class(args.label).images
    classifier = None
    if cfg.fid_features == PENULTIMATE:
        if not args.classifier:
            raise ConfigError("fid.features = penultimate needs --classifier CHECKPOINT")
        classifier = load_checkpoint(args.classifier)
    fake = sample(load_checkpoint(args.generator), len(real), stage_seed(cfg.seed, "fid"))
    value = fid_from_images(real, fake, FeatureExtractor(cfg.fid_features, classifier))
    print(f"FID ({cfg.fid_features} features, class {args.label}, n={len(real)}): {value!r}")


def _generator_arg(text: str) -> tuple[int, str]:
    label, sep, path = text.partition("=")
    if not sep or label not in ("0", "1"):
        raise argparse.ArgumentTypeError(f"expected LABEL=PATH with LABEL 0 or 1, got {text!r}")
    return int(label), path


def run_augment(args) -> None:
    cfg = _config(args)
    out = _out(cfg)
    f_o, _ = _split(cfg)
    generators = {c: load_checkpoint(p) for c, p in (args.generator or [])}
    f_a = augment(f_o, generators, cfg.augment_ratio, stage_seed(cfg.seed, "augment"), cfg.augment_mode)
    export_dataset(f_a, out / "f_a")
    write_manifest(f_a, out / "f_a_manifest.csv")
    print(f"|F_o| = {len(f_o)}, |F_a| = {len(f_a)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchaug", description="GAN augmentation of labeled image patches.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, fn, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", metavar="PATH", help="key = value config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="global seed, overrides the config")
        p.add_argument("--out", metavar="DIR", help="output directory, overrides the config")
        p.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bitwise reproducibility")
        p.set_defaults(fn=fn)
        return p

    command("experiment", run_experiment, "run the full baseline vs augmented comparison")
    command("synth-data", run_synth_data, "write the synthetic dataset as PNGs")
    p = command("train-gan", run_train_gan, "train per-class GANs on the training split")
    p.add_argument("--label", type=int, choices=LABELS, help="train only this class")
    command("train-classifier", run_train_classifier, "train and evaluate the classifier on the original data")
    p = command("fid", run_fid, "FID between a class's training images and a generator's samples")
    p.add_argument("--generator", required=True, metavar="PATH")
    p.add_argument("--label", type=int, choices=LABELS, required=True)
    p.add_argument("--classifier", metavar="PATH", help="feature network for penultimate-mode FID")
    p = command("augment", run_augment, "build F_a from the training split and generator checkpoints")
    p.add_argument("--generator", type=_generator_arg, action="append", metavar="LABEL=PATH")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    limits = threadpool_limits(1) if args.deterministic else contextlib.nullcontext()
    try:
        with limits:
            args.fn(args)
    except PatchAugError as exc:
        print(f"patchaug {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"patchaug {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
