"""A small numpy neural-network engine: layers, reverse-mode gradients, optimizers."""

from .layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, Softmax, Tensor
from .network import (
    CLASSIFIER,
    COMPENSATOR,
    LayerSpec,
    Network,
    amc_cnn_specs,
    build_amc_cnn,
    load_checkpoint,
    save_checkpoint,
)
from .optim import SGD, Adam, cross_entropy, cross_entropy_grad, make_optimizer, one_hot
from .training import EpochStats, EvalResult, TrainConfig, TrainReport, confusion_matrix, evaluate, predict, train

__all__ = [
    "Adam", "CLASSIFIER", "COMPENSATOR", "Conv2D", "Dense", "Dropout", "EpochStats", "EvalResult",
    "Flatten", "Layer", "LayerSpec", "MaxPool2D", "Network", "ReLU", "SGD", "Softmax", "Tensor",
    "TrainConfig", "TrainReport", "amc_cnn_specs", "build_amc_cnn", "confusion_matrix", "cross_entropy",
    "cross_entropy_grad", "evaluate", "load_checkpoint", "make_optimizer", "one_hot", "predict",
    "save_checkpoint", "train",
]
