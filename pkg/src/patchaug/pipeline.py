"""The end-to-end experiment: baseline classifier, GANs, FID, augmentation, augmented classifier.

Stages run in a fixed order and each receives its own seed,
``derive_seed(global_seed, stage_name)``.  Every artifact lands in the output
directory:

    stages.log                       one line per stage, in order
    f_o_manifest.csv, test_manifest.csv, f_a_manifest.csv
    classifier_baseline.galc, classifier_baseline_curve.csv
    gan_class{c}_generator.galc, gan_class{c}_discriminator.galc, gan_class{c}_log.csv
    fid.csv
    classifier_augmented.galc, classifier_augmented_curve.csv
    report.csv, report.txt
"""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .classifier import evaluate, train_classifier, write_curve_csv
from .config import ExperimentConfig
from .data import (
    LABELS,
    TUMOR_ONLY,
    PatchDataset,
    augment,
    generate_synthetic_dataset,
    load_patch_dataset,
    split,
    write_manifest,
)
from .errors import PatchAugError, RelativeIncreaseUndefined, StorageError
from .gan import sample, train_gan, write_log_csv
from .metrics import PENULTIMATE, FeatureExtractor, extract_features, fid, moments, relative_increase
from .models import ModelParams
from .seeding import derive_seed

log = logging.getLogger(__name__)

STAGES = (
    "data",
    "split",
    "baseline-classifier",
    "gan",
    "fid",
    "augment",
    "augmented-classifier",
    "report",
)


class StageError(PatchAugError):
    """A pipeline stage failed; ``cause`` is the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def stage_seed(seed: int, stage: str) -> int:
    return derive_seed(seed, stage)


@dataclass(frozen=True)
class MetricsReport:
    fid: float | None
    fid_class0: float | None
    fid_class1: float | None
    fid_feature_mode: str
    baseline_accuracy: float
    augmented_accuracy: float
    augmentation_ratio: float
    relative_increase: float | None
    size_f_o: int
    size_f_a: int
    seed: int
    classifier_seed: int
    gan_seed_class0: int
    gan_seed_class1: int
    started_at: str
    finished_at: str


_PCT_FIELDS = ("baseline_accuracy", "augmented_accuracy")
_FLOAT_FIELDS = ("fid", "fid_class0", "fid_class1", "augmentation_ratio", "relative_increase")
_INT_FIELDS = ("size_f_o", "size_f_a", "seed", "classifier_seed", "gan_seed_class0", "gan_seed_class1")


def as_percent(fraction: float) -> float:
    """Accuracy fraction → percent rounded to two decimals, as reported."""
    return float(f"{100.0 * fraction:.2f}")


def _fmt(name: str, value) -> str:
    if value is None:
        return ""
    if name in _PCT_FIELDS:
        return f"{value:.2f}"
    if name in _FLOAT_FIELDS:
        return repr(float(value))
    return str(value)


def _parse(name: str, text: str):
    if name in _PCT_FIELDS:
        return float(text)
    if name in _FLOAT_FIELDS:
        return None if text == "" else float(text)
    if name in _INT_FIELDS:
        return int(text)
    return text


def read_report(path) -> MetricsReport:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, row = rows[0], rows[1]
    return MetricsReport(**{k: _parse(k, v) for k, v in zip(header, row)})


def _summary(report: MetricsReport, dataset_label: str) -> str:
    def pct(v):
        return "n/a" if v is None else f"{v:.2f}%"

    def num(v):
        return "n/a" if v is None else f"{v:.3f}"

    rows = [
        ("Dataset", dataset_label),
        (f"Frechet Inception Distance ({report.fid_feature_mode} features)", num(report.fid)),
        ("  class 0 / class 1", f"{num(report.fid_class0)} / {num(report.fid_class1)}"),
        ("Augmented Dataset Percentage Increase", pct(100.0 * report.augmentation_ratio)),
        ("Original Convolutional Network Accuracy", pct(report.baseline_accuracy)),
        ("Augmented Convolutional Network Accuracy", pct(report.augmented_accuracy)),
        ("Convolutional Network Accuracy Percentage Increase", pct(report.relative_increase)),
        ("|F_o| / |F_a|", f"{report.size_f_o} / {report.size_f_a}"),
        ("Seed", str(report.seed)),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
    lines.append("")
    lines.append(
        f"FID is computed on {report.fid_feature_mode} features, not Inception features; "
        "values are comparable only between runs using the same feature mode."
    )
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, out_dir, dataset_label: str = "") -> None:
    out = Path(out_dir)
    names = [f.name for f in fields(MetricsReport)]
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            w.writerow([_fmt(n, getattr(report, n)) for n in names])
        (out / "report.txt").write_text(_summary(report, dataset_label), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write report to {out}: {exc}") from exc


def _timestamp(deterministic: bool) -> str:
    if deterministic:
        epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
        now = _dt.datetime.fromtimestamp(epoch, _dt.timezone.utc)
    else:
        now = _dt.datetime.now(_dt.timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%SZ")


def load_dataset(cfg: ExperimentConfig) -> tuple[PatchDataset, str]:
    if cfg.data_root:
        return load_patch_dataset(cfg.data_root), str(cfg.data_root)
    s = cfg.synthetic
    ds = generate_synthetic_dataset(s.n_per_class, s.geometry, stage_seed(cfg.seed, "data"), s.noise)
    return ds, f"synthetic two-texture patches ({'x'.join(map(str, s.geometry))}, {s.n_per_class}/class)"


def split_dataset(cfg: ExperimentConfig, ds: PatchDataset) -> tuple[PatchDataset, PatchDataset]:
    return split(ds, replace(cfg.split, seed=stage_seed(cfg.seed, "split")))


def gan_classes(cfg: ExperimentConfig, f_o: PatchDataset) -> list[int]:
    wanted = (1,) if cfg.augment_mode == TUMOR_ONLY else LABELS
    return [c for c in wanted if f_o.counts[c] > 0]


def fid_table(
    f_o: PatchDataset,
    generators: dict[int, ModelParams],
    fx: FeatureExtractor,
    seed: int,
) -> dict[str, tuple[int, float | None]]:
    """FID between each class's real training images and as many generated ones, plus the pooled value."""
    out: dict[str, tuple[int, float | None]] = {}
    real_all, fake_all = [], []
    for c, gen in sorted(generators.items()):
        real = f_o.of_class(c).images
        fake = sample(gen, len(real), derive_seed(seed, f"class{c}"))
        real_all.append(real)
        fake_all.append(fake)
        value = None
        if len(real) >= 2:
            value = fid(moments(extract_features(real, fx)), moments(extract_features(fake, fx)))
        out[f"class{c}"] = (len(real), value)
    real = np.concatenate(real_all)
    fake = np.concatenate(fake_all)
    pooled = fid(moments(extract_features(real, fx)), moments(extract_features(fake, fx))) if len(real) >= 2 else None
    out["pooled"] = (len(real), pooled)
    return out


def write_fid_csv(table: dict[str, tuple[int, float | None]], mode: str, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "feature_mode", "n_real", "n_generated", "fid"])
        for scope, (n, value) in table.items():
            w.writerow([scope, mode, n, n, "" if value is None else repr(value)])


class _StageLog:
    def __init__(self, path: Path):
        self.path = path
        self.path.write_text("", encoding="utf-8")
        self.index = 0

    def run(self, name: str, fn, *args):
        self.index += 1
        log.info("stage %d/%d: %s", self.index, len(STAGES), name)
        try:
            result = fn(*args)
        except Exception as exc:
            self._write(f"{self.index} {name} FAILED: {exc}")
            raise StageError(name, exc) from exc
        self._write(f"{self.index} {name} ok")
        return result

    def _write(self, line: str) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def cmd_experiment(cfg: ExperimentConfig, deterministic: bool = False) -> MetricsReport:
    """Run the whole comparison and write every artifact to ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("setup", StorageError(f"cannot create output directory {out}: {exc}")) from exc
    started = _timestamp(deterministic)
    stages = _StageLog(out / "stages.log")

    ds, label = stages.run("data", load_dataset, cfg)

    def do_split():
        f_o, test = split_dataset(cfg, ds)
        write_manifest(f_o, out / "f_o_manifest.csv")
        write_manifest(test, out / "test_manifest.csv")
        return f_o, test

    f_o, test = stages.run("split", do_split)
    clf_cfg = replace(cfg.classifier, seed=stage_seed(cfg.seed, "classifier"))

    def do_classifier(train: PatchDataset, tag: str):
        model, curve = train_classifier(train, clf_cfg)
        save_checkpoint(model, out / f"classifier_{tag}.galc")
        write_curve_csv(curve, out / f"classifier_{tag}_curve.csv")
        return model, evaluate(model, test)

    baseline_model, baseline_acc = stages.run("baseline-classifier", do_classifier, f_o, "baseline")

    gan_seeds = {c: stage_seed(cfg.seed, f"gan/class{c}") for c in LABELS}

    def do_gans():
        gens = {}
        for c in gan_classes(cfg, f_o):
            g, d, entries = train_gan(f_o.of_class(c).images, replace(cfg.gan, seed=gan_seeds[c]))
            save_checkpoint(g, out / f"gan_class{c}_generator.galc")
            save_checkpoint(d, out / f"gan_class{c}_discriminator.galc")
            write_log_csv(entries, out / f"gan_class{c}_log.csv")
            gens[c] = g
        return gens

    generators = stages.run("gan", do_gans)

    def do_fid():
        fx = FeatureExtractor(cfg.fid_features, baseline_model if cfg.fid_features == PENULTIMATE else None)
        table = fid_table(f_o, generators, fx, stage_seed(cfg.seed, "fid"))
        write_fid_csv(table, cfg.fid_features, out / "fid.csv")
        return table

    table = stages.run("fid", do_fid)

    def do_augment():
        f_a = augment(f_o, generators, cfg.augment_ratio, stage_seed(cfg.seed, "augment"), cfg.augment_mode)
        write_manifest(f_a, out / "f_a_manifest.csv")
        return f_a

    f_a = stages.run("augment", do_augment)
    _, augmented_acc = stages.run("augmented-classifier", do_classifier, f_a, "augmented")

    def do_report():
        base_pct, aug_pct = as_percent(baseline_acc), as_percent(augmented_acc)
        try:
            rel = relative_increase(base_pct, aug_pct)
        except RelativeIncreaseUndefined:
            rel = None
        report = MetricsReport(
            fid=table["pooled"][1],
            fid_class0=table.get("class0", (0, None))[1],
            fid_class1=table.get("class1", (0, None))[1],
            fid_feature_mode=cfg.fid_features,
            baseline_accuracy=base_pct,
            augmented_accuracy=aug_pct,
            augmentation_ratio=cfg.augment_ratio,
            relative_increase=rel,
            size_f_o=len(f_o),
            size_f_a=len(f_a),
            seed=cfg.seed,
            classifier_seed=clf_cfg.seed,
            gan_seed_class0=gan_seeds[0],
            gan_seed_class1=gan_seeds[1],
            started_at=started,
            finished_at=_timestamp(deterministic),
        )
        emit_report(report, out, label)
        return report

    return stages.run("report", do_report)
