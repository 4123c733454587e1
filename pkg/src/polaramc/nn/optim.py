"""Loss and optimizers."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError

LOG_FLOOR = 1e-12


def _check_one_hot(labels: np.ndarray):
    labels = np.asarray(labels)
    if labels.ndim != 2 or not np.all((labels == 0) | (labels == 1)) or not np.all(labels.sum(axis=1) == 1):
        raise InvalidArgumentError("labels must be one-hot rows")
    return labels


def one_hot(classes, n_classes: int = 4, dtype=np.float64) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    out = np.zeros((classes.size, n_classes), dtype=dtype)
    out[np.arange(classes.size), classes] = 1
    return out


def cross_entropy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -sum_i m_i log(max(p_i, 1e-12))."""
    labels = _check_one_hot(labels)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != labels.shape:
        raise InvalidArgumentError(f"prediction shape {pred.shape} != label shape {labels.shape}")
    return float(-(labels * np.log(np.maximum(pred, LOG_FLOOR))).sum(axis=1).mean())


def cross_entropy_grad(pred: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(cross_entropy)/d(pred); zero where the log floor is active."""
    labels = _check_one_hot(labels)
    pred = np.asarray(pred)
    live = pred >= LOG_FLOOR
    safe = np.where(live, pred, 1.0)
    return np.where(live, -labels / safe, 0.0).astype(pred.dtype) / pred.shape[0]


class SGD:
    def __init__(self, params, lr: float = 0.01):
        if lr <= 0:
            raise InvalidArgumentError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= p.data.dtype.type(self.lr) * p.grad


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise InvalidArgumentError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            # eps folded into the bias-corrected denominator
            p.data -= (scale * m / (np.sqrt(v) + self.eps * np.sqrt(1 - b2**self.t))).astype(p.data.dtype)


def make_optimizer(params, config):
    if config.optimizer == "sgd":
        return SGD(params, config.lr)
    if config.optimizer == "adam":
        return Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    raise InvalidArgumentError(f"unknown optimizer {config.optimizer!r}")
