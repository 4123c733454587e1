"""SNR sweeps, the convergence comparison and the fading experiment."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from ..ccn import JointConfig, Pipeline, build_ccn, predict_pipeline
from ..ccn import train_joint
from ..cumulants import classify_hoc_batch
from ..errors import DataError, InvalidArgumentError
from ..modem import ModulationScheme
from ..nn import Network, TrainReport, build_amc_cnn, confusion_matrix, load_checkpoint, predict, train
from ..nn.training import EvalResult
from .config import ExperimentConfig
from .dataset import Dataset, Split, image_spec, validation_split

log = logging.getLogger(__name__)

N_CLASSES = len(ModulationScheme)
LABELS = [s.label for s in ModulationScheme]


@dataclass
class SweepResult:
    mode: str
    snrs: list
    results: list  # EvalResult per SNR, same order as snrs
    report: TrainReport | None = None
    threshold: float = 0.85
    model: object = None  # the trained network, when there is one

    def accuracy(self, snr: float) -> float:
        return self.results[self._index(snr)].accuracy

    def confusion(self, snr: float) -> np.ndarray:
        return self.results[self._index(snr)].confusion

    def _index(self, snr):
        for i, s in enumerate(self.snrs):
            if math.isclose(s, snr):
                return i
        raise InvalidArgumentError(f"SNR {snr} not in sweep {self.snrs}")

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.results])

    @property
    def train_seconds(self) -> float:
        return self.report.total_seconds if self.report else 0.0

    @property
    def epochs_to_threshold(self):
        return self.report.epochs_to(self.threshold) if self.report else None

    def spearman(self) -> float:
        return float(stats.spearmanr(self.snrs, self.accuracies).statistic)

    def rows(self):
        for snr, res in zip(self.snrs, self.results):
            yield [self.mode, _num(snr), f"{res.accuracy:.6f}"] + [f"{a:.6f}" for a in res.per_class]


SWEEP_HEADER = ["mode", "snr", "accuracy"] + [f"acc_{label}" for label in LABELS]


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_sweep_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for result in results:
            writer.writerows(result.rows())


def write_confusion_csv(result: SweepResult, path) -> None:
    """Long format: one row per (snr, true, predicted) count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mode", "snr", "true", "predicted", "count"])
        for snr, res in zip(result.snrs, result.results):
            for i, j in np.ndindex(res.confusion.shape):
                writer.writerow([result.mode, _num(snr), LABELS[i], LABELS[j], int(res.confusion[i, j])])


def per_snr_results(split: Split, pred: np.ndarray, snrs) -> list[EvalResult]:
    out = []
    for snr in snrs:
        mask = np.isclose(split.snr, snr)
        out.append(EvalResult(confusion_matrix(split.labels[mask], pred[mask], N_CLASSES)))
    return out


# --------------------------------------------------------------------------
# image CNN


def train_image_model(cfg: ExperimentConfig, ds: Dataset, mode: str) -> tuple[Network, TrainReport]:
    """One CNN fitted on the pooled all-SNR training images of ``mode``."""
    images = ds.images("train", mode)
    labels = ds.split("train").labels
    tr, va = validation_split(len(labels), cfg.val_fraction, cfg.seed)
    net = build_amc_cnn(image_spec(cfg, mode).shape, seed=cfg.seed)
    log.info("training %s CNN on %d images (%d held out)", mode, len(tr), len(va))
    report = train(net, images[tr], labels[tr], cfg.train_config(), images[va], labels[va], N_CLASSES)
    return net, report


def evaluate_image_model(net: Network, cfg: ExperimentConfig, ds: Dataset, mode: str, report=None) -> SweepResult:
    test = ds.split("test")
    pred = predict(net, ds.images("test", mode))
    return SweepResult(mode, list(cfg.snrs), per_snr_results(test, pred, cfg.snrs), report, cfg.threshold, net)


def evaluate_cumulants(cfg: ExperimentConfig, ds: Dataset, chunk: int = 1024) -> SweepResult:
    test = ds.split("test")
    pred = np.concatenate([
        classify_hoc_batch(np.asarray(test.frames[i : i + chunk], dtype=np.complex128))
        for i in range(0, len(test), chunk)
    ])
    return SweepResult("cumulants", list(cfg.snrs), per_snr_results(test, pred, cfg.snrs), None, cfg.threshold)


def run_sweep(cfg: ExperimentConfig, ds: Dataset, mode: str | None = None):
    """Accuracy vs SNR for one feature mode; returns ``(SweepResult, model or None)``."""
    mode = mode or cfg.mode
    ds.check_config(cfg)
    if mode == "cumulants":
        return evaluate_cumulants(cfg, ds), None
    net, report = train_image_model(cfg, ds, mode)
    return evaluate_image_model(net, cfg, ds, mode, report), net


CONVERGENCE_HEADER = ["mode", "epochs_to_threshold", "seconds_to_threshold", "reached", "threshold", "max_epochs"]


def convergence_table(results, threshold: float, max_epochs: int) -> list[list]:
    rows = []
    for res in results:
        epoch = res.report.epochs_to(threshold)
        reached = epoch is not None
        epoch = epoch if reached else max_epochs
        seconds = res.report.seconds_to(epoch)
        rows.append([res.mode, epoch, f"{seconds:.3f}", "yes" if reached else "not reached", threshold, max_epochs])
    return rows


def write_convergence_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONVERGENCE_HEADER)
        writer.writerows(rows)


def compare_convergence(cfg: ExperimentConfig, ds: Dataset):
    """Train polar and iq CNNs with one TrainConfig on the same frames; returns (rows, sweeps)."""
    ds.check_config(cfg)
    missing = {"polar", "iq"} - set(ds.manifest["image_shapes"])
    if missing:
        raise DataError(f"dataset lacks {sorted(missing)} images; regenerate with image_modes = polar,iq")
    sweeps = [run_sweep(cfg, ds, mode)[0] for mode in ("polar", "iq")]
    return convergence_table(sweeps, cfg.threshold, cfg.epochs), sweeps


# --------------------------------------------------------------------------
# CCN


@dataclass
class CcnRun:
    pipeline: Pipeline
    result: SweepResult
    delta_r: np.ndarray  # per test frame
    delta_theta: np.ndarray


def build_pipeline(cfg: ExperimentConfig) -> Pipeline:
    if cfg.ccn_warm_start:
        cnn = load_checkpoint(cfg.ccn_warm_start, expect_kind=0)
    else:
        cnn = build_amc_cnn(image_spec(cfg, "polar").shape, seed=cfg.seed)
    return Pipeline(build_ccn(seed=cfg.seed), cnn, grid=image_spec(cfg, "polar"))


def train_ccn_system(cfg: ExperimentConfig, ds: Dataset, pipe: Pipeline | None = None) -> tuple[Pipeline, TrainReport]:
    train_split = ds.split("train")
    frames = np.asarray(train_split.frames)
    truth = train_split.channel[:, :2]
    tr, va = validation_split(len(train_split), cfg.val_fraction, cfg.seed)
    pipe = pipe or build_pipeline(cfg)
    joint = JointConfig(cfg.train_config(), ccn_lr=cfg.ccn_lr, freeze_cnn_epochs=cfg.ccn_freeze_epochs)
    log.info("training CCN + polar CNN on %d frames", len(tr))
    report = train_joint(pipe, frames[tr], train_split.labels[tr], truth[tr], joint,
                         val=(frames[va], train_split.labels[va], truth[va]), n_classes=N_CLASSES)
    return pipe, report


def evaluate_ccn_system(pipe: Pipeline, cfg: ExperimentConfig, ds: Dataset, report=None) -> CcnRun:
    test = ds.split("test")
    pred, dr, dth = predict_pipeline(pipe, np.asarray(test.frames))
    result = SweepResult("polar-cnn+ccn", list(cfg.snrs), per_snr_results(test, pred, cfg.snrs), report, cfg.threshold,
                         pipe)
    return CcnRun(pipe, result, dr, dth)


def write_ccn_dump(run: CcnRun, split: Split, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label", "snr", "delta_r", "delta_theta", "amplitude", "theta0"])
        for k in range(len(split)):
            writer.writerow([k, LABELS[split.labels[k]], _num(split.snr[k]), f"{run.delta_r[k]:.9g}",
                             f"{run.delta_theta[k]:.9g}", f"{split.channel[k, 0]:.9g}", f"{split.channel[k, 1]:.9g}"])


def run_fading_experiment(cfg: ExperimentConfig, ds: Dataset):
    """iq-CNN, polar-CNN and polar-CNN+CCN on the same faded test frames.

    Returns ``(sweeps, models)`` where ``sweeps`` is ordered iq, polar, polar+CCN.
    """
    if not cfg.fading:
        raise InvalidArgumentError("the fading experiment needs fading = on")
    ds.check_config(cfg)
    sweeps, models = [], {}
    for mode in ("iq", "polar"):
        net, report = train_image_model(cfg, ds, mode)
        res = evaluate_image_model(net, cfg, ds, mode, report)
        res.mode = f"{mode}-cnn"
        sweeps.append(res)
        models[res.mode] = net
    pipe, report = train_ccn_system(cfg, ds)
    run = evaluate_ccn_system(pipe, cfg, ds, report)
    sweeps.append(run.result)
    models[run.result.mode] = run
    return sweeps, models


# --------------------------------------------------------------------------
# result checks


NESTED_PAIRS = ((0, 1), (2, 3))  # QPSK/8PSK and 16QAM/64QAM


def nested_confusion_dominates(confusion: np.ndarray) -> bool:
    """Low-SNR confusion structure: errors stay inside the nested pairs.

    Holds when predictions landing in the true class's pair outweigh those
    crossing to the other pair, and each pair's larger off-diagonal count
    beats every cross-pair count (ties fail).
    """
    cm = np.asarray(confusion, dtype=float)
    within = sum(cm[np.ix_(p, p)].sum() for p in NESTED_PAIRS)
    if cm.sum() - within >= within:
        return False
    off = cm.copy()
    np.fill_diagonal(off, -1)
    pair_mass = [max(off[i, j], off[j, i]) for i, j in NESTED_PAIRS]
    others = [off[i, j] for i, j in np.ndindex(off.shape)
              if i != j and {i, j} not in ({0, 1}, {2, 3})]
    return min(pair_mass) > max(others)


def write_outputs(out_dir: Path, stem: str, sweeps) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.csv"
    write_sweep_csv(sweeps, path)
    return path
