"""Adversarial training of a generator/discriminator pair.

The discriminator ascends ``V(D, G) = E[log D(x)] + E[log(1 - D(G(z)))]``;
the generator descends it, by default through the non-saturating surrogate
``-E[log D(G(z))]``.  Latent vectors are uniform on ``[-1, 1)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError, GeometryError, NonFiniteError, StorageError
from .models import (
    GeneratorConfig,
    ModelParams,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
)
from .optim import AdamState, adam_step
from .seeding import derive_seed, make_rng, rng_state
from .tensor import Tape, Tensor, as_tensor, bce, clamped_log, mean, random_uniform

NON_SATURATING = "non-saturating"
SATURATING = "saturating"
SAMPLE_BATCH = 500


@dataclass(frozen=True)
class GanTrainConfig:
    steps: int = 2000
    batch_size: int = 100
    d_steps_per_g_step: int = 1
    latent_dim: int = 64
    base_channels: int = 32
    d_widths: tuple[int, int] = (16, 32)
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = NON_SATURATING
    seed: int = 0
    log_interval: int = 10

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        for name in ("batch_size", "d_steps_per_g_step", "latent_dim", "base_channels", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.loss not in (NON_SATURATING, SATURATING):
            raise ValueError(f"unknown generator loss {self.loss!r}")


@dataclass(frozen=True)
class TrainLogEntry:
    step: int
    d_loss: float
    g_loss: float
    mean_d_real: float
    mean_d_fake: float


# --------------------------------------------------------------------------
# objective


def _prob(x) -> Tensor:
    t = as_tensor(x, dtype=np.float64) if not isinstance(x, Tensor) else x
    if t.size == 0:
        raise EmptyDatasetError("empty batch")
    return t


def _out(value: Tensor, inputs) -> Tensor | float:
    return value if any(isinstance(x, Tensor) for x in inputs) else value.item()


def value_v(d_real, d_fake):
    """``mean(log d_real) + mean(log(1 - d_fake))`` with the usual clamp."""
    r, f = _prob(d_real), _prob(d_fake)
    v = mean(clamped_log(r)) + mean(clamped_log(1.0 - f))
    return _out(v, (d_real, d_fake))


def discriminator_loss(d_real, d_fake):
    r, f = _prob(d_real), _prob(d_fake)
    loss = bce(r, np.ones(r.shape)) + bce(f, np.zeros(f.shape))
    return _out(loss, (d_real, d_fake))


def generator_loss(d_fake, saturating: bool = False):
    """Non-saturating ``-mean(log d_fake)``, or the minimax ``mean(log(1 - d_fake))``."""
    f = _prob(d_fake)
    loss = mean(clamped_log(1.0 - f)) if saturating else bce(f, np.ones(f.shape))
    return _out(loss, (d_fake,))


# --------------------------------------------------------------------------
# training


class _EpochSampler:
    """Batches without replacement; reshuffles when an epoch runs out."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        self.n, self.batch, self.rng = n, min(batch, n), rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos:self.pos + self.batch]
        self.pos += self.batch
        return np.sort(idx)


def _latent(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    z = (rng.random((n, dim)) * 2.0 - 1.0).astype(np.float32)
    return np.minimum(z, np.nextafter(np.float32(1), np.float32(0)))


def _finite(x: float, what: str, step: int) -> float:
    if not math.isfinite(x):
        raise NonFiniteError(f"{what} is not finite at step {step}")
    return x


def train_gan(
    images,
    cfg: GanTrainConfig,
    generator: ModelParams | None = None,
    discriminator: ModelParams | None = None,
) -> tuple[ModelParams, ModelParams, list[TrainLogEntry]]:
    """Train a GAN on ``images`` (N×C×H×W in [0, 1]) for ``cfg.steps`` generator steps.

    Each step runs ``d_steps_per_g_step`` discriminator updates, each on a
    fresh real batch and fresh latent batch, then one generator update.  Log
    entries are kept every ``log_interval`` steps; ``mean_d_fake`` is
    D(G(z)) measured in the generator update, i.e. how often the current
    discriminator is fooled.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4:
        raise GeometryError(f"expected N x C x H x W images, got shape {images.shape}")
    if images.shape[0] == 0:
        raise EmptyDatasetError("cannot train a GAN on an empty dataset")
    geometry = tuple(images.shape[1:])
    if generator is None:
        gcfg = GeneratorConfig(cfg.latent_dim, cfg.base_channels, geometry)
        generator = build_generator(gcfg, derive_seed(cfg.seed, "generator"))
    if discriminator is None:
        discriminator = build_discriminator(geometry, derive_seed(cfg.seed, "discriminator"), cfg.d_widths)
    for m in (generator, discriminator):
        if tuple(m.geometry) != geometry:
            raise GeometryError(f"{m.arch} geometry {m.geometry} does not match images {geometry}")
    latent_dim = generator.config["latent_dim"]

    sampler = _EpochSampler(images.shape[0], cfg.batch_size, make_rng(derive_seed(cfg.seed, "batches")))
    z_rng = make_rng(derive_seed(cfg.seed, "latent"))
    hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    g_state, d_state = AdamState(**hyper), AdamState(**hyper)
    g_params = dict(generator.params)
    d_params = dict(discriminator.params)
    saturating = cfg.loss == SATURATING
    log: list[TrainLogEntry] = []

    for step in range(1, cfg.steps + 1):
        for _ in range(cfg.d_steps_per_g_step):
            x_real = images[sampler.next()]
            fake = generator_forward(generator, _latent(z_rng, sampler.batch, latent_dim), g_params)
            leaves = {k: Tensor._wrap(v.data, True) for k, v in d_params.items()}
            with Tape() as tape:
                d_real = discriminator_forward(discriminator, x_real, leaves)
                d_fake = discriminator_forward(discriminator, fake.detach(), leaves)
                d_loss = discriminator_loss(d_real, d_fake)
            names = list(leaves)
            grads = dict(zip(names, tape.gradient(d_loss, [leaves[k] for k in names])))
            d_params, d_state = adam_step(leaves, grads, d_state)

        leaves = {k: Tensor._wrap(v.data, True) for k, v in g_params.items()}
        with Tape() as tape:
            fake = generator_forward(generator, _latent(z_rng, sampler.batch, latent_dim), leaves)
            d_gen = discriminator_forward(discriminator, fake, d_params)
            g_loss = generator_loss(d_gen, saturating)
        names = list(leaves)
        grads = dict(zip(names, tape.gradient(g_loss, [leaves[k] for k in names])))
        g_params, g_state = adam_step(leaves, grads, g_state)

        if step % cfg.log_interval == 0:
            log.append(
                TrainLogEntry(
                    step,
                    _finite(d_loss.item(), "discriminator loss", step),
                    _finite(g_loss.item(), "generator loss", step),
                    float(np.mean(d_real.data, dtype=np.float64)),
                    float(np.mean(d_gen.data, dtype=np.float64)),
                )
            )
        else:
            _finite(d_loss.item(), "discriminator loss", step)
            _finite(g_loss.item(), "generator loss", step)

    snapshot = rng_state(z_rng)
    g_out = generator.with_params(g_params, step=generator.step + cfg.steps, rng_state=snapshot)
    d_out = discriminator.with_params(d_params, step=discriminator.step + cfg.steps, rng_state=snapshot)
    return g_out, d_out, log


def sample(generator: ModelParams, n: int, seed: int) -> np.ndarray:
    """``n`` generated images (float32, in [0, 1]) from latent vectors seeded by ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = random_uniform((n, generator.config["latent_dim"]), -1.0, 1.0, seed).data
    out = [generator_forward(generator, z[i:i + SAMPLE_BATCH]).data for i in range(0, n, SAMPLE_BATCH)]
    return np.concatenate(out)


def write_log_csv(log: list[TrainLogEntry], path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "d_loss", "g_loss", "mean_d_real", "mean_d_fake"])
            for e in log:
                w.writerow([e.step, repr(e.d_loss), repr(e.g_loss), repr(e.mean_d_real), repr(e.mean_d_fake)])
    except OSError as exc:
        raise StorageError(f"cannot write training log {path}: {exc}") from exc
