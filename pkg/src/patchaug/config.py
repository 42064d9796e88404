"""Experiment configuration files.

A config is flat ``key = value`` text with dotted section prefixes::

    # comments and blank lines are ignored
    seed = 7
    data.synthetic.n_per_class = 50
    gan.steps = 300
    augment.ratio = 0.5

Every key has a default; unknown or repeated keys are errors.  Lists are
comma-separated, booleans are ``true``/``false``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .classifier import ClassifierTrainConfig
from .data import PER_CLASS, TUMOR_ONLY, SplitSpec
from .errors import ConfigError
from .gan import NON_SATURATING, SATURATING, GanTrainConfig
from .metrics import PENULTIMATE, RAW


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "out_dir": (str, "runs/experiment"),
    "data.root": (str, ""),
    "data.synthetic.n_per_class": (int, 250),
    "data.synthetic.channels": (int, 3),
    "data.synthetic.height": (int, 16),
    "data.synthetic.width": (int, 16),
    "data.synthetic.noise": (float, 0.03),
    "split.train_fraction": (float, 0.8),
    "split.test_fraction": (float, 0.2),
    "split.stratified": (_bool, True),
    "gan.steps": (int, 2000),
    "gan.batch_size": (int, 100),
    "gan.d_steps_per_g_step": (int, 1),
    "gan.latent_dim": (int, 64),
    "gan.base_channels": (int, 32),
    "gan.d_widths": (_ints, (16, 32)),
    "gan.lr": (float, 2e-4),
    "gan.beta1": (float, 0.5),
    "gan.beta2": (float, 0.999),
    "gan.eps": (float, 1e-8),
    "gan.loss": (_choice(NON_SATURATING, SATURATING), NON_SATURATING),
    "gan.log_interval": (int, 10),
    "classifier.batch_size": (int, 100),
    "classifier.epochs": (int, 10),
    "classifier.lr": (float, 0.01),
    "classifier.eps": (float, 1e-8),
    "classifier.widths": (_ints, (16, 32)),
    "classifier.hidden": (int, 64),
    "augment.ratio": (float, 0.5),
    "augment.mode": (_choice(PER_CLASS, TUMOR_ONLY), PER_CLASS),
    "fid.features": (_choice(PENULTIMATE, RAW), PENULTIMATE),
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 250
    geometry: tuple[int, int, int] = (3, 16, 16)
    noise: float = 0.03


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/experiment"
    data_root: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    classifier: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    augment_ratio: float = 0.5
    augment_mode: str = PER_CLASS
    fid_features: str = PENULTIMATE

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg


def parse_values(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: {key!r} already set on line {lines[key]}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        lines[key] = lineno
    return values


def build_config(values: dict) -> ExperimentConfig:
    v = {k: d for k, (_, d) in SCHEMA.items()}
    v.update(values)
    try:
        return ExperimentConfig(
            seed=v["seed"],
            out_dir=v["out_dir"],
            data_root=v["data.root"] or None,
            synthetic=SyntheticSpec(
                v["data.synthetic.n_per_class"],
                (v["data.synthetic.channels"], v["data.synthetic.height"], v["data.synthetic.width"]),
                v["data.synthetic.noise"],
            ),
            split=SplitSpec(v["split.train_fraction"], v["split.test_fraction"], 0, v["split.stratified"]),
            gan=GanTrainConfig(
                steps=v["gan.steps"],
                batch_size=v["gan.batch_size"],
                d_steps_per_g_step=v["gan.d_steps_per_g_step"],
                latent_dim=v["gan.latent_dim"],
                base_channels=v["gan.base_channels"],
                d_widths=tuple(v["gan.d_widths"]),
                lr=v["gan.lr"],
                beta1=v["gan.beta1"],
                beta2=v["gan.beta2"],
                eps=v["gan.eps"],
                loss=v["gan.loss"],
                log_interval=v["gan.log_interval"],
            ),
            classifier=ClassifierTrainConfig(
                batch_size=v["classifier.batch_size"],
                epochs=v["classifier.epochs"],
                lr=v["classifier.lr"],
                eps=v["classifier.eps"],
                widths=tuple(v["classifier.widths"]),
                hidden=v["classifier.hidden"],
            ),
            augment_ratio=v["augment.ratio"],
            augment_mode=v["augment.mode"],
            fid_features=v["fid.features"],
        )
    except ValueError as exc:
        # nested dataclasses validate their own fields
        raise ConfigError(f"invalid configuration: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = parse_values(text, source)
    if values.get("augment.ratio", 0.0) < 0:
        raise ConfigError(f"{source}: augment.ratio must be >= 0")
    if len(values.get("gan.d_widths", (16, 32))) != 2 or len(values.get("classifier.widths", (16, 32))) != 2:
        raise ConfigError(f"{source}: layer width lists need exactly two entries")
    return build_config(values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back to config text (every key, schema order)."""
    g, c, s = cfg.gan, cfg.classifier, cfg.synthetic
    values = {
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "data.root": cfg.data_root or "",
        "data.synthetic.n_per_class": s.n_per_class,
        "data.synthetic.channels": s.geometry[0],
        "data.synthetic.height": s.geometry[1],
        "data.synthetic.width": s.geometry[2],
        "data.synthetic.noise": s.noise,
        "split.train_fraction": cfg.split.train_fraction,
        "split.test_fraction": cfg.split.test_fraction,
        "split.stratified": str(cfg.split.stratified).lower(),
        "gan.steps": g.steps,
        "gan.batch_size": g.batch_size,
        "gan.d_steps_per_g_step": g.d_steps_per_g_step,
        "gan.latent_dim": g.latent_dim,
        "gan.base_channels": g.base_channels,
        "gan.d_widths": ",".join(map(str, g.d_widths)),
        "gan.lr": g.lr,
        "gan.beta1": g.beta1,
        "gan.beta2": g.beta2,
        "gan.eps": g.eps,
        "gan.loss": g.loss,
        "gan.log_interval": g.log_interval,
        "classifier.batch_size": c.batch_size,
        "classifier.epochs": c.epochs,
        "classifier.lr": c.lr,
        "classifier.eps": c.eps,
        "classifier.widths": ",".join(map(str, c.widths)),
        "classifier.hidden": c.hidden,
        "augment.ratio": cfg.augment_ratio,
        "augment.mode": cfg.augment_mode,
        "fid.features": cfg.fid_features,
    }
    return "".join(f"{k} = {values[k]}\n" for k in SCHEMA)
