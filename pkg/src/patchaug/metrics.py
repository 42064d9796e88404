"""FID, classification accuracy and report arithmetic."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError, EmptyDatasetError, NonFiniteError, RelativeIncreaseUndefined, TooFewSamplesError
from .linalg import check_symmetric, sqrtm_psd, trace_sqrtm_psd
from .models import CLASSIFIER, ModelParams, classifier_features

RAW = "raw"
PENULTIMATE = "penultimate"
FEATURE_BATCH = 500


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (mu.size, mu.size):
            raise DataError(f"covariance shape {sigma.shape} does not match mean of length {mu.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", check_symmetric(sigma, tol=1e-9))

    @property
    def dim(self) -> int:
        return self.mu.size

    @cached_property
    def sigma_sqrt(self) -> np.ndarray:
        return sqrtm_psd(self.sigma)


@dataclass(frozen=True)
class FeatureExtractor:
    """Fixed image embedding used for FID.

    ``raw`` flattens pixels; ``penultimate`` runs a frozen classifier up to its
    hidden layer.
    """

    mode: str = RAW
    classifier: ModelParams | None = None

    def __post_init__(self):
        if self.mode not in (RAW, PENULTIMATE):
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if self.mode == PENULTIMATE and (self.classifier is None or self.classifier.arch != CLASSIFIER):
            raise ValueError("penultimate features need a classifier")

    def dim(self, geometry) -> int:
        if self.mode == RAW:
            return int(np.prod(geometry))
        return int(self.classifier.config["hidden"])


def extract_features(images, fx: FeatureExtractor) -> np.ndarray:
    images = np.asarray(images)
    if images.shape[0] < 2:
        raise TooFewSamplesError(f"need at least 2 images for feature statistics, got {images.shape[0]}")
    if fx.mode == RAW:
        return images.reshape(images.shape[0], -1).astype(np.float64)
    chunks = [
        classifier_features(fx.classifier, images[i:i + FEATURE_BATCH]).data
        for i in range(0, images.shape[0], FEATURE_BATCH)
    ]
    return np.concatenate(chunks).astype(np.float64)


def moments(features) -> GaussianStats:
    """Sample mean and unbiased (n − 1) covariance."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewSamplesError(f"need an n x d matrix with n >= 2, got shape {x.shape}")
    mu = x.mean(axis=0)
    xc = x - mu
    sigma = xc.T @ xc / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (sigma + sigma.T))


def fid(r: GaussianStats, g: GaussianStats) -> float:
    """Fréchet distance between two Gaussians.

    ``‖μ_r − μ_g‖² + tr(Σ_r + Σ_g − 2·sqrtm(Σ_r^½ Σ_g Σ_r^½))``.  Negative
    round-off down to ``−1e-8·(1 + tr Σ_r + tr Σ_g)`` is clamped to 0.
    """
    if r.dim != g.dim:
        raise DataError(f"dimension mismatch: {r.dim} vs {g.dim}")
    root = r.sigma_sqrt
    inner = root @ g.sigma @ root
    cross = trace_sqrtm_psd(0.5 * (inner + inner.T))
    diff = r.mu - g.mu
    scale = float(np.trace(r.sigma) + np.trace(g.sigma))
    value = float(diff @ diff) + scale - 2.0 * cross
    if not np.isfinite(value):
        raise NonFiniteError("FID is not finite")
    if value < 0.0:
        if value < -1e-8 * (1.0 + abs(scale)):
            raise NonFiniteError(f"FID came out negative ({value:.3e}); covariances are not PSD")
        value = 0.0
    return value


def fid_from_images(real, generated, fx: FeatureExtractor) -> float:
    return fid(moments(extract_features(real, fx)), moments(extract_features(generated, fx)))


def accuracy(pred, labels, threshold: float = 0.5) -> float:
    """Fraction of ``(pred >= threshold) == label``; a prediction at the threshold counts as positive."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if pred.size != labels.size:
        raise DataError(f"{pred.size} predictions for {labels.size} labels")
    if pred.size == 0:
        raise EmptyDatasetError("accuracy of an empty set")
    return float(np.mean((pred >= threshold).astype(np.int64) == labels.astype(np.int64)))


def relative_increase(old_pct: float, new_pct: float) -> float:
    """``100 · (new − old) / old``; e.g. 80 → 87 gives 8.75."""
    if old_pct == 0:
        raise RelativeIncreaseUndefined("relative increase from a zero baseline")
    if old_pct < 0:
        raise ValueError(f"baseline must be positive, got {old_pct}")
    return 100.0 * (new_pct - old_pct) / old_pct
