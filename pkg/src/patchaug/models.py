"""Generator, discriminator and patch classifier.

Models are plain data (:class:`ModelParams`) plus forward functions; there are
no layer objects.  Every architecture is a handful of fixed layers whose
widths live in ``ModelParams.config``:

generator
    dense(latent → base·H/2·W/2) → reshape → leaky_relu →
    transposed_conv2d(stride 2) → tanh → affine to [0, 1]
discriminator
    conv2d(stride 2) → leaky_relu → conv2d(stride 2) → leaky_relu →
    dense → sigmoid
classifier
    the discriminator trunk with its own widths, then a ReLU hidden layer
    (the penultimate features) and a sigmoid head
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import GeometryError
from .seeding import make_rng
from .tensor import (
    Tensor,
    as_tensor,
    conv2d,
    leaky_relu,
    matmul,
    relu,
    reshape,
    sigmoid,
    tanh,
    transposed_conv2d,
)

GENERATOR = "generator"
DISCRIMINATOR = "discriminator"
CLASSIFIER = "classifier"

KERNEL = 4
PADDING = 1
LEAK = 0.2


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 64
    base_channels: int = 16
    geometry: tuple[int, int, int] = (3, 50, 50)


@dataclass(eq=False)
class ModelParams:
    arch: str
    geometry: tuple[int, int, int]
    params: dict[str, Tensor]
    config: dict = field(default_factory=dict)
    step: int = 0
    rng_state: dict | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.arch == other.arch
            and tuple(self.geometry) == tuple(other.geometry)
            and self.config == other.config
            and self.step == other.step
            and self.rng_state == other.rng_state
            and list(self.params) == list(other.params)
            and all(
                self.params[k].shape == other.params[k].shape
                and self.params[k].dtype == other.params[k].dtype
                and np.array_equal(self.params[k].data, other.params[k].data)
                for k in self.params
            )
        )

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def with_params(self, params: Mapping[str, Tensor], step: int | None = None, rng_state=None) -> "ModelParams":
        return ModelParams(
            self.arch,
            self.geometry,
            {k: Tensor._wrap(np.asarray(params[k].data, dtype=np.float32)) for k in self.params},
            dict(self.config),
            self.step if step is None else step,
            self.rng_state if rng_state is None else rng_state,
        )


def _check_geometry(geometry) -> tuple[int, int, int]:
    try:
        c, h, w = (int(v) for v in geometry)
    except (TypeError, ValueError):
        raise GeometryError(f"geometry must be (channels, height, width), got {geometry!r}") from None
    if c < 1 or h < 4 or w < 4:
        raise GeometryError(f"geometry {c}x{h}x{w}: need >= 1 channel and spatial size >= 4")
    return c, h, w


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor._wrap(rng.uniform(-s, s, size=shape).astype(np.float32))


def _zeros(*shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=np.float32))


def _down(size: int) -> int:
    return (size + 2 * PADDING - KERNEL) // 2 + 1


def build_generator(cfg: GeneratorConfig, seed: int) -> ModelParams:
    c, h, w = _check_geometry(cfg.geometry)
    if h % 2 or w % 2:
        raise GeometryError(f"generator needs even height and width, got {h}x{w}")
    if cfg.latent_dim < 1 or cfg.base_channels < 1:
        raise GeometryError("latent_dim and base_channels must be positive")
    rng = make_rng(seed)
    base, k = cfg.base_channels, KERNEL
    proj = base * (h // 2) * (w // 2)
    params = {
        "fc.w": _glorot(rng, (cfg.latent_dim, proj), cfg.latent_dim, proj),
        "fc.b": _zeros(proj),
        "up.w": _glorot(rng, (base, c, k, k), base * k * k, c * k * k),
        "up.b": _zeros(1, c, 1, 1),
    }
    config = {"latent_dim": cfg.latent_dim, "base_channels": base}
    return ModelParams(GENERATOR, (c, h, w), params, config)


def _trunk_params(rng, geometry, widths) -> dict[str, Tensor]:
    c, h, w = geometry
    c1, c2 = widths
    k = KERNEL
    return {
        "conv1.w": _glorot(rng, (c1, c, k, k), c * k * k, c1 * k * k),
        "conv1.b": _zeros(1, c1, 1, 1),
        "conv2.w": _glorot(rng, (c2, c1, k, k), c1 * k * k, c2 * k * k),
        "conv2.b": _zeros(1, c2, 1, 1),
    }


def _flat_dim(geometry, c2: int) -> int:
    _, h, w = geometry
    return c2 * _down(_down(h)) * _down(_down(w))


def build_discriminator(geometry, seed: int, widths: tuple[int, int] = (16, 32)) -> ModelParams:
    geometry = _check_geometry(geometry)
    rng = make_rng(seed)
    params = _trunk_params(rng, geometry, widths)
    flat = _flat_dim(geometry, widths[1])
    params["head.w"] = _glorot(rng, (flat, 1), flat, 1)
    params["head.b"] = _zeros(1)
    return ModelParams(DISCRIMINATOR, geometry, params, {"widths": list(widths)})


def build_classifier(geometry, seed: int, widths: tuple[int, int] = (16, 32), hidden: int = 64) -> ModelParams:
    geometry = _check_geometry(geometry)
    rng = make_rng(seed)
    params = _trunk_params(rng, geometry, widths)
    flat = _flat_dim(geometry, widths[1])
    params["hidden.w"] = _glorot(rng, (flat, hidden), flat, hidden)
    params["hidden.b"] = _zeros(hidden)
    params["head.w"] = _glorot(rng, (hidden, 1), hidden, 1)
    params["head.b"] = _zeros(1)
    return ModelParams(CLASSIFIER, geometry, params, {"widths": list(widths), "hidden": hidden})


# --------------------------------------------------------------------------
# forward passes


def _resolve(m: ModelParams, params: Mapping[str, Tensor] | None) -> Mapping[str, Tensor]:
    p = m.params if params is None else params
    if set(p) != set(m.params):
        raise KeyError(f"{m.arch} expects parameters {sorted(m.params)}, got {sorted(p)}")
    return p


def _images(m: ModelParams, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(m.geometry):
        raise GeometryError(f"{m.arch} expects N x {'x'.join(map(str, m.geometry))} images, got {x.shape}")
    return x


def generator_forward(m: ModelParams, z, params: Mapping[str, Tensor] | None = None) -> Tensor:
    p = _resolve(m, params)
    z = as_tensor(z)
    latent = m.config["latent_dim"]
    if z.ndim != 2 or z.shape[1] != latent:
        raise GeometryError(f"generator expects N x {latent} latent vectors, got {z.shape}")
    _, h, w = m.geometry
    base = m.config["base_channels"]
    hid = matmul(z, p["fc.w"]) + p["fc.b"]
    hid = leaky_relu(reshape(hid, (z.shape[0], base, h // 2, w // 2)), LEAK)
    out = transposed_conv2d(hid, p["up.w"], stride=2, padding=PADDING) + p["up.b"]
    return tanh(out) * 0.5 + 0.5


def _trunk(p: Mapping[str, Tensor], x: Tensor) -> Tensor:
    h = leaky_relu(conv2d(x, p["conv1.w"], stride=2, padding=PADDING) + p["conv1.b"], LEAK)
    h = leaky_relu(conv2d(h, p["conv2.w"], stride=2, padding=PADDING) + p["conv2.b"], LEAK)
    return reshape(h, (x.shape[0], -1))


def discriminator_forward(m: ModelParams, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Probability that each image is real, shape N×1."""
    p = _resolve(m, params)
    h = _trunk(p, _images(m, x))
    return sigmoid(matmul(h, p["head.w"]) + p["head.b"])


def classifier_features(m: ModelParams, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Penultimate (hidden ReLU) activations, shape N×hidden."""
    p = _resolve(m, params)
    h = _trunk(p, _images(m, x))
    return relu(matmul(h, p["hidden.w"]) + p["hidden.b"])


def classifier_forward(m: ModelParams, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Tumor probability per image, shape N×1."""
    p = _resolve(m, params)
    h = classifier_features(m, x, p)
    return sigmoid(matmul(h, p["head.w"]) + p["head.b"])


def forward(m: ModelParams, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    if m.arch == GENERATOR:
        return generator_forward(m, x, params)
    if m.arch == DISCRIMINATOR:
        return discriminator_forward(m, x, params)
    if m.arch == CLASSIFIER:
        return classifier_forward(m, x, params)
    raise ValueError(f"unknown architecture {m.arch!r}")


def trainable(m: ModelParams) -> dict[str, Tensor]:
    """Fresh leaf tensors (requiring gradients) sharing ``m``'s values."""
    return {k: Tensor._wrap(v.data, True) for k, v in m.params.items()}
