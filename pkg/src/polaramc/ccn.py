"""Channel compensation network (CCN) and the differentiable CCN -> CNN pipeline.

The CCN reads a coarse soft polar histogram of the received symbols and emits
``(u, v)``; the compensation is ``delta_r = exp(u)`` and
``delta_theta = pi * tanh(v)``, applied as ``r' = r * delta_r`` and
``theta' = wrap(theta + delta_theta)`` before soft rasterization. A zeroed
output layer therefore starts the pipeline at the identity compensation.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericError, ShapeError, StateError
from .features import (
    CCN_INPUT_GRID,
    POLAR_GRID,
    GridSpec,
    PolarFrame,
    max_normalize,
    max_normalize_backward,
    polar_components,
    soft_splat,
    soft_splat_backward,
    wrap_angle,
)
from .modem import ModulationScheme
from .nn import COMPENSATOR, EpochStats, LayerSpec, Network, TrainConfig, TrainReport, make_optimizer, one_hot

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompensationParams:
    delta_r: float = 1.0
    delta_theta: float = 0.0

    def __post_init__(self):
        if not self.delta_r > 0:
            raise InvalidArgumentError("delta_r must be positive")
        if not math.isfinite(self.delta_theta):
            raise InvalidArgumentError("delta_theta must be finite")


IDENTITY = CompensationParams()


@dataclass(frozen=True)
class CcnSpec:
    input_grid: GridSpec = CCN_INPUT_GRID
    widths: tuple = (256, 128, 64, 2)

    def __post_init__(self):
        if len(self.widths) != 4 or self.widths[-1] != 2:
            raise InvalidArgumentError("the CCN has exactly four dense layers ending in 2 outputs")


def build_ccn(spec: CcnSpec = CcnSpec(), seed: int = 0, dtype=np.float32) -> Network:
    layers = []
    for k, width in enumerate(spec.widths):
        layers.append(LayerSpec("dense", (width,)))
        if k < len(spec.widths) - 1:
            layers.append(LayerSpec("relu"))
    net = Network((spec.input_grid.rows * spec.input_grid.cols,), layers, seed=seed, dtype=dtype, kind=COMPENSATOR)
    head = net.layers[-1]
    head.weight.data[...] = 0
    head.bias.data[...] = 0
    return net


def ccn_features(r: np.ndarray, theta: np.ndarray, spec: CcnSpec = CcnSpec()) -> np.ndarray:
    """Flattened, max-normalized soft polar histogram; r, theta shaped (B, L)."""
    mass, _ = soft_splat(r, theta, spec.input_grid)
    return max_normalize(mass).reshape(mass.shape[0], -1)


# |u| bound keeps delta_r finite and positive in floating point; the gradient is zero beyond it
LOG_SCALE_LIMIT = 30.0


def _params_from_head(out: np.ndarray):
    u = out[:, 0].astype(np.float64)
    live = np.abs(u) < LOG_SCALE_LIMIT
    t = np.tanh(out[:, 1].astype(np.float64))
    return np.exp(np.clip(u, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT)), math.pi * t, t, live


def ccn_forward(polar: PolarFrame, ccn: Network, spec: CcnSpec = CcnSpec()) -> CompensationParams:
    out = ccn.forward(ccn_features(polar.r[None], polar.theta[None], spec), training=False)
    ccn._recorded = False
    dr, dth, _, _ = _params_from_head(out)
    return CompensationParams(float(dr[0]), float(dth[0]))


def compensate_arrays(r, theta, delta_r, delta_theta):
    """Broadcasting form of :func:`compensate`; per-frame params shaped (B,) against (B, L)."""
    delta_r = np.asarray(delta_r, dtype=float)
    delta_theta = np.asarray(delta_theta, dtype=float)
    if delta_r.ndim == 1:
        delta_r = delta_r[:, None]
        delta_theta = delta_theta[:, None]
    return r * delta_r, wrap_angle(theta + delta_theta)


def compensate(polar: PolarFrame, params: CompensationParams) -> PolarFrame:
    r, theta = compensate_arrays(polar.r, polar.theta, params.delta_r, params.delta_theta)
    return PolarFrame(r, theta, polar.scheme)


class Pipeline:
    """polar frames -> CCN -> compensation -> soft raster -> CNN -> class probabilities."""

    def __init__(self, ccn: Network, cnn: Network, spec: CcnSpec = CcnSpec(), grid: GridSpec = POLAR_GRID):
        if cnn.input_shape != (1, grid.rows, grid.cols):
            raise ShapeError(f"CNN input {cnn.input_shape} does not match grid {grid.shape}")
        if ccn.input_shape != (spec.input_grid.rows * spec.input_grid.cols,):
            raise ShapeError(f"CCN input {ccn.input_shape} does not match its histogram grid")
        self.ccn, self.cnn, self.spec, self.grid = ccn, cnn, spec, grid
        self._cache = None
        self.last_compensation = None

    def compensation(self, r, theta, training=False):
        out = self.ccn.forward(ccn_features(r, theta, self.spec), training)
        return _params_from_head(out)

    def forward(self, r, theta, training: bool = False) -> np.ndarray:
        r = np.atleast_2d(r)
        theta = np.atleast_2d(theta)
        dr, dth, t, live = self.compensation(r, theta, training)
        r2, th2 = compensate_arrays(r, theta, dr, dth)
        mass, splat = soft_splat(r2, th2, self.grid)
        image = max_normalize(mass)
        probs = self.cnn.forward(image[:, None], training)
        self._cache = (r, dr, t, live, mass, splat)
        self.last_compensation = (dr, dth)
        return probs

    def forward_frames(self, y: np.ndarray, training: bool = False) -> np.ndarray:
        r, theta = polar_components(np.asarray(y, dtype=np.complex128))
        return self.forward(r, theta, training)

    def backward(self, grad, skip_softmax: bool = False):
        """Backpropagate through CNN, rasterizer, compensation and CCN."""
        if self._cache is None:
            raise StateError("backward called before forward")
        r, dr, t, live, mass, splat = self._cache
        self._cache = None
        g_img = self.cnn.backward(grad, need_input_grad=True, skip_softmax=skip_softmax)[:, 0]
        g_mass = max_normalize_backward(mass, g_img.astype(np.float64))
        g_r2, g_th2 = soft_splat_backward(splat, g_mass)
        g_dr = (g_r2 * r).sum(axis=1)
        g_dth = g_th2.sum(axis=1)
        g_head = np.stack([np.where(live, g_dr * dr, 0.0), g_dth * math.pi * (1 - t**2)], axis=1)
        self.ccn.backward(g_head)

    @property
    def params(self):
        return self.ccn.params + self.cnn.params


# --------------------------------------------------------------------------
# joint training


@dataclass
class JointConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    ccn_lr: float | None = None  # defaults to train.lr
    freeze_cnn_epochs: int = 0  # staged option: CCN alone for the first k epochs
    freeze_ccn: bool = False  # keep the CCN fixed (identity at init) and train only the CNN


def symmetry_of(scheme: ModulationScheme) -> float:
    return math.pi / 4 if ModulationScheme(scheme) == ModulationScheme.PSK8 else math.pi / 2


def phase_error(delta_theta, theta0, symmetry):
    """|delta_theta - (-theta0)| on the circle of period ``symmetry``."""
    d = np.mod(np.asarray(delta_theta) + np.asarray(theta0), symmetry)
    return np.minimum(d, symmetry - d)


def predict_pipeline(pipe: Pipeline, y, batch_size: int = 256):
    """Class index and compensation (delta_r, delta_theta) per frame."""
    preds, drs, dths = [], [], []
    for start in range(0, len(y), batch_size):
        probs = pipe.forward_frames(y[start : start + batch_size])
        preds.append(probs.argmax(axis=1))
        drs.append(pipe.last_compensation[0])
        dths.append(pipe.last_compensation[1])
    pipe._cache = None
    pipe.cnn._recorded = pipe.ccn._recorded = False
    return np.concatenate(preds), np.concatenate(drs), np.concatenate(dths)


def compensation_diagnostics(delta_r, delta_theta, amplitude, theta0, labels) -> dict:
    sym = np.array([symmetry_of(c) for c in np.asarray(labels)])
    return {
        "amp_err": float(np.mean(np.abs(np.asarray(delta_r) * np.asarray(amplitude) - 1))),
        "phase_err": float(np.mean(phase_error(delta_theta, theta0, sym))),
    }


def train_joint(pipe: Pipeline, frames, labels, truth, config: JointConfig,
                val=None, n_classes: int = 4) -> TrainReport:
    """Jointly train CCN and CNN on faded frames with the classification loss.

    ``truth`` holds per-frame (amplitude, theta0) and is only used for the
    logged diagnostics ``amp_err`` (mean |delta_r * a - 1|) and ``phase_err``
    (mean wrapped |delta_theta + theta0| modulo the constellation symmetry).
    ``val`` is an optional ``(frames, labels, truth)`` triple.
    """
    n = len(frames)
    if n == 0:
        raise InvalidArgumentError("training set is empty")
    tc = config.train
    labels = np.asarray(labels, dtype=np.int64)
    ccn_cfg = TrainConfig(lr=tc.lr if config.ccn_lr is None else config.ccn_lr, batch_size=tc.batch_size, epochs=tc.epochs,
                          optimizer=tc.optimizer, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps, seed=tc.seed)
    opt_ccn = make_optimizer(pipe.ccn.params, ccn_cfg)
    opt_cnn = make_optimizer(pipe.cnn.params, tc)
    rng = np.random.default_rng([tc.seed, 11])
    report = TrainReport()
    best, best_state = -1.0, None
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, tc.batch_size):
            idx = np.sort(order[start : start + tc.batch_size])
            y = labels[idx]
            probs = pipe.forward_frames(frames[idx], training=True)
            target = one_hot(y, n_classes, dtype=probs.dtype)
            total_loss += float(-np.log(np.maximum(probs[np.arange(len(y)), y].astype(np.float64), 1e-12)).sum())
            correct += int((probs.argmax(axis=1) == y).sum())
            pipe.backward((probs - target) / probs.dtype.type(len(y)), skip_softmax=True)
            if not config.freeze_ccn:
                opt_ccn.step()
            if epoch > config.freeze_cnn_epochs:
                opt_cnn.step()
        loss = total_loss / n
        if not math.isfinite(loss):
            raise NumericError(f"loss became {loss} at epoch {epoch}")
        val_acc, extra = float("nan"), {}
        if val is not None and len(val[0]):
            vy, vl, vt = val
            pred, d_r, d_th = predict_pipeline(pipe, vy)
            val_acc = float((pred == np.asarray(vl)).mean())
            vt = np.asarray(vt)
            extra = compensation_diagnostics(d_r, d_th, vt[:, 0], vt[:, 1], vl)
        seconds = time.perf_counter() - t0
        report.epochs.append(EpochStats(epoch, loss, correct / n, val_acc, seconds, extra))
        log.info("joint epoch %d loss %.4f train %.4f val %.4f %s (%.1fs)", epoch, loss, correct / n, val_acc, extra, seconds)
        if val is not None and val_acc > best:
            best = val_acc
            best_state = (pipe.ccn.get_state(), pipe.cnn.get_state())
            report.best_epoch = epoch
    if best_state is not None:
        pipe.ccn.set_state(best_state[0])
        pipe.cnn.set_state(best_state[1])
    else:
        report.best_epoch = tc.epochs
    return report
