"""Training and evaluation of the tumor/non-tumor patch classifier."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import PatchDataset
from .errors import EmptyDatasetError, NonFiniteError, SingleClassDatasetError, StorageError
from .metrics import accuracy
from .models import ModelParams, build_classifier, classifier_forward
from .optim import ADAGRAD_LR, EPS, AdagradState, adagrad_step
from .seeding import derive_seed, make_rng
from .tensor import Tape, Tensor, bce

PREDICT_BATCH = 500


@dataclass(frozen=True)
class ClassifierTrainConfig:
    batch_size: int = 100
    epochs: int = 10
    lr: float = ADAGRAD_LR
    eps: float = EPS
    widths: tuple[int, int] = (16, 32)
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.hidden < 1:
            raise ValueError("batch_size and hidden must be positive, epochs non-negative")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_bce: float
    train_accuracy: float


def init_classifier(geometry, cfg: ClassifierTrainConfig) -> ModelParams:
    return build_classifier(geometry, derive_seed(cfg.seed, "classifier/init"), cfg.widths, cfg.hidden)


def train_classifier(train: PatchDataset, cfg: ClassifierTrainConfig) -> tuple[ModelParams, list[EpochStats]]:
    """Minimize binary cross-entropy with Adagrad over shuffled mini-batches.

    The last, shorter batch of each epoch is kept.  ``train_accuracy`` is
    measured on each batch's predictions before its update.
    """
    if len(train) == 0:
        raise EmptyDatasetError("empty training set")
    present = {c for c, n in train.counts.items() if n}
    if len(present) < 2:
        raise SingleClassDatasetError(f"training set contains only class {sorted(present)}")

    model = init_classifier(train.geometry, cfg)
    rng = make_rng(derive_seed(cfg.seed, "classifier/shuffle"))
    state = AdagradState(lr=cfg.lr, eps=cfg.eps)
    params = dict(model.params)
    targets = train.labels.astype(np.float32).reshape(-1, 1)
    curve: list[EpochStats] = []
    n = len(train)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            leaves = {k: Tensor._wrap(v.data, True) for k, v in params.items()}
            with Tape() as tape:
                pred = classifier_forward(model, train.images[idx], leaves)
                loss = bce(pred, targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"classifier loss is not finite in epoch {epoch}")
            names = list(leaves)
            grads = dict(zip(names, tape.gradient(loss, [leaves[k] for k in names])))
            params, state = adagrad_step(leaves, grads, state)
            loss_sum += value * idx.size
            correct += int(np.sum((pred.data.reshape(-1) >= 0.5) == (targets[idx].reshape(-1) == 1)))
        curve.append(EpochStats(epoch, loss_sum / n, correct / n))

    return model.with_params(params, step=cfg.epochs), curve


def predict(model: ModelParams, images) -> np.ndarray:
    """Tumor probabilities, one per image."""
    images = np.asarray(images, dtype=np.float32)
    out = [classifier_forward(model, images[i:i + PREDICT_BATCH]).data for i in range(0, len(images), PREDICT_BATCH)]
    return np.concatenate(out).reshape(-1)


def evaluate(model: ModelParams, test: PatchDataset) -> float:
    if len(test) == 0:
        raise EmptyDatasetError("empty test set")
    return accuracy(predict(model, test.images), test.labels)


def write_curve_csv(curve: list[EpochStats], path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_bce", "train_accuracy"])
            for e in curve:
                w.writerow([e.epoch, repr(e.mean_bce), repr(e.train_accuracy)])
    except OSError as exc:
        raise StorageError(f"cannot write loss curve {path}: {exc}") from exc
