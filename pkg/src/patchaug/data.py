"""Labeled patch datasets: PNG ingestion, splits, a synthetic stand-in, and GAN augmentation.

Labels are 0 (non-tumor) and 1 (tumor).  On disk a dataset is a directory
with one sub-directory per label::

    root/0/*.png
    root/1/*.png
    root/manifest.csv        # written by export_dataset; ignored on load
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ClassTooSmallError,
    DataError,
    GeometryError,
    MissingClassDirectoryError,
    MissingGeneratorError,
    MixedGeometryError,
    StorageError,
    UnreadableFileError,
)
from .seeding import derive_seed, make_rng

LABELS = (0, 1)
REAL = "real"
SYNTHETIC = "synthetic"
PER_CLASS = "per-class"
TUMOR_ONLY = "tumor-only"

# H&E-like palette: eosin background, hematoxylin foreground
_EOSIN = np.array([0.93, 0.72, 0.84])
_HEMATOXYLIN = np.array([0.36, 0.22, 0.56])


@dataclass(frozen=True, eq=False)
class PatchDataset:
    images: np.ndarray
    labels: np.ndarray
    provenance: tuple[str, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise GeometryError(f"images must be N x C x H x W, got shape {images.shape}")
        n = images.shape[0]
        if labels.size != n or len(self.provenance) != n or len(self.names) != n:
            raise DataError("images, labels, provenance and names must have the same length")
        if not np.isin(labels, LABELS).all():
            raise DataError(f"labels must be 0 or 1, got {sorted(set(labels.tolist()) - set(LABELS))}")
        if n and (images.min() < 0.0 or images.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.images.shape[1:])

    @property
    def counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in LABELS}

    def of_class(self, label: int) -> "PatchDataset":
        return self.subset(np.flatnonzero(self.labels == label))

    def subset(self, indices) -> "PatchDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return PatchDataset(
            self.images[idx],
            self.labels[idx],
            tuple(self.provenance[i] for i in idx),
            tuple(self.names[i] for i in idx),
        )

    def equals(self, other: "PatchDataset") -> bool:
        return (
            np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
            and self.provenance == other.provenance
            and self.names == other.names
        )


def concat(parts: Sequence[PatchDataset]) -> PatchDataset:
    parts = [p for p in parts if len(p)]
    if not parts:
        raise DataError("nothing to concatenate")
    if len({p.geometry for p in parts}) > 1:
        raise MixedGeometryError(f"cannot join datasets of geometries {sorted({p.geometry for p in parts})}")
    return PatchDataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        tuple(v for p in parts for v in p.provenance),
        tuple(v for p in parts for v in p.names),
    )


def round_half_up(x) -> int:
    """Round to the nearest integer, halves away from zero, on the decimal value of ``x``."""
    return int(Decimal(repr(x) if isinstance(x, float) else str(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


# --------------------------------------------------------------------------
# PNG ingestion / export


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "LA"):
                arr = np.asarray(im.convert("L"), dtype=np.uint8)[None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8).transpose(2, 0, 1)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise UnreadableFileError(f"cannot read image {path}: {exc}") from exc
    return arr


def load_patch_dataset(root) -> PatchDataset:
    """Read ``root/0/*.png`` and ``root/1/*.png``, pixels scaled to [0, 1]."""
    root = Path(root)
    images, labels, names = [], [], []
    first: tuple[str, tuple] | None = None
    for label in LABELS:
        folder = root / str(label)
        if not folder.is_dir():
            raise MissingClassDirectoryError(f"missing class directory {folder}")
        for path in sorted(folder.glob("*.png"), key=lambda p: p.name):
            arr = _read_png(path)
            name = f"{label}/{path.name}"
            if first is None:
                first = (name, arr.shape)
            elif arr.shape != first[1]:
                raise MixedGeometryError(
                    f"{name} has geometry {'x'.join(map(str, arr.shape))}, "
                    f"but {first[0]} has {'x'.join(map(str, first[1]))}"
                )
            images.append(arr)
            labels.append(label)
            names.append(name)
    if not images:
        raise DataError(f"no PNG files under {root}")
    stacked = np.stack(images).astype(np.float32) / np.float32(255.0)
    return PatchDataset(stacked, np.array(labels), (REAL,) * len(labels), tuple(names))


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_manifest(ds: PatchDataset, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["filename", "label", "provenance"])
            for name, label, prov in zip(ds.names, ds.labels, ds.provenance):
                w.writerow([name, int(label), prov])
    except OSError as exc:
        raise StorageError(f"cannot write manifest {path}: {exc}") from exc


def export_dataset(ds: PatchDataset, root) -> None:
    """Write ``ds`` in the loader's layout plus ``manifest.csv``."""
    root = Path(root)
    try:
        for label in LABELS:
            (root / str(label)).mkdir(parents=True, exist_ok=True)
        for img, name in zip(ds.images, ds.names):
            arr = _to_uint8(img)
            pil = Image.fromarray(arr[0], mode="L") if arr.shape[0] == 1 else Image.fromarray(arr.transpose(1, 2, 0))
            pil.save(root / name, format="PNG")
    except OSError as exc:
        raise StorageError(f"cannot export dataset to {root}: {exc}") from exc
    write_manifest(ds, root / "manifest.csv")


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if self.train_fraction <= 0 or self.test_fraction <= 0:
            raise DataError("split fractions must be positive")
        if abs(self.train_fraction + self.test_fraction - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {self.train_fraction} + {self.test_fraction}")


def _take(n: int, fraction: float) -> int:
    return min(max(round_half_up(fraction * n), 1), n - 1)


def split(ds: PatchDataset, spec: SplitSpec) -> tuple[PatchDataset, PatchDataset]:
    """Seeded train/test partition; both outputs keep the input's item order."""
    rng = make_rng(spec.seed)
    train_idx: list[int] = []
    if spec.stratified:
        for label in LABELS:
            idx = np.flatnonzero(ds.labels == label)
            if idx.size == 0:
                continue
            if idx.size < 2:
                raise ClassTooSmallError(f"class {label} has {idx.size} item; stratified split needs 2")
            perm = rng.permutation(idx)
            train_idx.extend(perm[: _take(idx.size, spec.train_fraction)].tolist())
    else:
        if len(ds) < 2:
            raise ClassTooSmallError("need at least 2 items to split")
        perm = rng.permutation(len(ds))
        train_idx = perm[: _take(len(ds), spec.train_fraction)].tolist()
    in_train = np.zeros(len(ds), dtype=bool)
    in_train[train_idx] = True
    return ds.subset(np.flatnonzero(in_train)), ds.subset(np.flatnonzero(~in_train))


# --------------------------------------------------------------------------
# synthetic textures


def _palette(channels: int, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    if channels == 3:
        bg, fg = _EOSIN, _HEMATOXYLIN
    else:
        bg = np.full(channels, _EOSIN.mean())
        fg = np.full(channels, _HEMATOXYLIN.mean())
    bg = bg + rng.uniform(-0.04, 0.04, size=(n, channels))
    fg = fg + rng.uniform(-0.06, 0.06, size=(n, channels))
    return bg, fg


def _blob_maps(rng: np.random.Generator, n: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    maps = np.zeros((n, h, w))
    n_blobs = rng.integers(2, 5, size=n)
    for k in range(4):
        cy, cx = rng.uniform(0.1, 0.9, size=(2, n))
        sigma = rng.uniform(0.10, 0.22, size=n)
        amp = rng.uniform(0.6, 1.0, size=n) * (k < n_blobs)
        d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
        maps += amp[:, None, None] * np.exp(-d2 / (2.0 * sigma[:, None, None] ** 2))
    return np.clip(maps, 0.0, 1.0)


def _stripe_maps(rng: np.random.Generator, n: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    theta = rng.uniform(0.0, np.pi, size=n)
    freq = rng.uniform(2.5, 4.0, size=n)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    proj = np.cos(theta)[:, None, None] * xx[None] + np.sin(theta)[:, None, None] * yy[None]
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * freq[:, None, None] * proj + phase[:, None, None])


def generate_synthetic_dataset(n_per_class: int, geometry=(3, 16, 16), seed: int = 0, noise: float = 0.03) -> PatchDataset:
    """Two-texture stand-in for tissue patches.

    Class 0 images are a few smooth Gaussian blobs, class 1 images are
    oriented stripes; both are tinted with a jittered H&E-like palette and
    carry Gaussian pixel noise.  Each class draws from its own seeded stream,
    so the first ``k`` items do not depend on ``n_per_class``.
    """
    if n_per_class < 1:
        raise DataError("n_per_class must be at least 1")
    c, h, w = (int(v) for v in geometry)
    parts = []
    for label, maker in ((0, _blob_maps), (1, _stripe_maps)):
        rng = make_rng(derive_seed(seed, f"synthetic/class{label}"))
        maps = maker(rng, n_per_class, h, w)
        bg, fg = _palette(c, rng, n_per_class)
        imgs = bg[:, :, None, None] * (1.0 - maps[:, None]) + fg[:, :, None, None] * maps[:, None]
        imgs = imgs + rng.normal(0.0, noise, size=imgs.shape)
        imgs = np.clip(imgs, 0.0, 1.0).astype(np.float32)
        names = tuple(f"{label}/patch_{i:05d}.png" for i in range(n_per_class))
        parts.append(PatchDataset(imgs, np.full(n_per_class, label), (REAL,) * n_per_class, names))
    return concat(parts)


# --------------------------------------------------------------------------
# augmentation


def synthetic_counts(counts: Mapping[int, int], ratio: float, mode: str = PER_CLASS) -> dict[int, int]:
    """Number of synthetic items to add per class."""
    if ratio < 0:
        raise DataError(f"augmentation ratio must be >= 0, got {ratio}")
    if mode == PER_CLASS:
        return {c: round_half_up(Decimal(repr(float(ratio))) * n) for c, n in counts.items()}
    if mode == TUMOR_ONLY:
        total = sum(counts.values())
        return {c: (round_half_up(Decimal(repr(float(ratio))) * total) if c == 1 else 0) for c in counts}
    raise DataError(f"unknown augmentation mode {mode!r}")


def augment(
    f_o: PatchDataset,
    generators: Mapping[int, "object"],
    ratio: float,
    seed: int,
    mode: str = PER_CLASS,
) -> PatchDataset:
    """Append GAN samples to ``f_o``.

    ``per-class`` adds ``round_half_up(ratio · n_c)`` samples to every class;
    ``tumor-only`` adds ``round_half_up(ratio · |f_o|)`` tumor samples.
    Real items come first, unchanged and in order.
    """
    from .gan import sample

    extra = synthetic_counts(f_o.counts, ratio, mode)
    parts = [f_o]
    for label in LABELS:
        k = extra.get(label, 0)
        if k == 0:
            continue
        gen = generators.get(label)
        if gen is None:
            raise MissingGeneratorError(f"no generator for class {label}")
        if tuple(gen.geometry) != f_o.geometry:
            raise GeometryError(f"class {label} generator makes {gen.geometry} images, dataset has {f_o.geometry}")
        imgs = sample(gen, k, derive_seed(seed, f"augment/class{label}"))
        names = tuple(f"{label}/synthetic_{i:05d}.png" for i in range(k))
        parts.append(PatchDataset(imgs, np.full(k, label), (SYNTHETIC,) * k, names))
    return concat(parts)
