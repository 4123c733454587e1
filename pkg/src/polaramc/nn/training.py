"""Mini-batch training loop and evaluation for image classifiers."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, NumericError
from .network import Network
from .optim import make_optimizer, one_hot

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgumentError("batch size and epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    seconds: float
    extra: dict = field(default_factory=dict)


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def total_seconds(self) -> float:
        return sum(e.seconds for e in self.epochs)

    def epochs_to(self, threshold: float):
        """First epoch (1-based) whose validation accuracy reaches ``threshold``, else None."""
        for e in self.epochs:
            if e.val_acc >= threshold:
                return e.epoch
        return None

    def seconds_to(self, epoch: int) -> float:
        return sum(e.seconds for e in self.epochs if e.epoch <= epoch)

    def write_csv(self, path) -> None:
        """Deterministic columns only; wall time goes to :meth:`write_timing_csv`."""
        extra = sorted({k for e in self.epochs for k in e.extra})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "train_acc", "val_acc", *extra])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.loss:.10g}", f"{e.train_acc:.10g}", f"{e.val_acc:.10g}",
                            *(f"{e.extra.get(k, float('nan')):.10g}" for k in extra)])

    def write_timing_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.seconds:.6f}"])


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def predict(net: Network, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class index per image (inference mode)."""
    out = np.empty(len(images), dtype=np.int64)
    for start in range(0, len(images), batch_size):
        probs = net.forward(images[start : start + batch_size], training=False)
        out[start : start + batch_size] = probs.argmax(axis=1)
    net._recorded = False
    return out


def train(net: Network, images, labels, config: TrainConfig, val_images=None, val_labels=None,
          n_classes: int = 4) -> TrainReport:
    """Train ``net`` in place with softmax + cross-entropy.

    ``labels`` are class indices. The parameters with the best validation
    accuracy are restored at the end (the final ones if no validation set).
    """
    n = len(images)
    if n == 0:
        raise InvalidArgumentError("training set is empty")
    labels = np.asarray(labels, dtype=np.int64)
    optimizer = make_optimizer(net.params, config)
    rng = np.random.default_rng([config.seed, 7])
    report = TrainReport()
    best_acc, best_state = -1.0, None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for idx in _batches(n, config.batch_size, order):
            idx = np.sort(idx)
            x = np.asarray(images[idx])
            y = labels[idx]
            probs = net.forward(x, training=True)
            target = one_hot(y, n_classes, dtype=probs.dtype)
            p_true = probs[np.arange(len(y)), y].astype(np.float64)
            total_loss += float(-np.log(np.maximum(p_true, 1e-12)).sum())
            correct += int((probs.argmax(axis=1) == y).sum())
            net.backward((probs - target) / probs.dtype.type(len(y)), skip_softmax=True)
            optimizer.step()
        loss = total_loss / n
        if not math.isfinite(loss):
            raise NumericError(f"loss became {loss} at epoch {epoch}")
        val_acc = float("nan")
        if val_images is not None and len(val_images):
            val_acc = float((predict(net, val_images) == np.asarray(val_labels)).mean())
        seconds = time.perf_counter() - t0
        report.epochs.append(EpochStats(epoch, loss, correct / n, val_acc, seconds))
        log.info("epoch %d loss %.4f train %.4f val %.4f (%.1fs)", epoch, loss, correct / n, val_acc, seconds)
        score = val_acc if not math.isnan(val_acc) else -epoch
        if val_images is not None and score > best_acc:
            best_acc, best_state = score, net.get_state()
            report.best_epoch = epoch
    if best_state is not None:
        net.set_state(best_state)
    else:
        report.best_epoch = config.epochs
    return report


@dataclass
class EvalResult:
    confusion: np.ndarray  # rows: true class, columns: predicted

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / max(self.total, 1))

    @property
    def per_class(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), rows, out=np.zeros(len(rows)), where=rows > 0)


def confusion_matrix(true, pred, n_classes: int = 4) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def evaluate(net: Network, images, labels, n_classes: int = 4) -> EvalResult:
    return EvalResult(confusion_matrix(labels, predict(net, images), n_classes))
