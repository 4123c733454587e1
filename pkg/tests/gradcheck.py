"""Central finite-difference helpers shared by the unit and acceptance tests."""

import numpy as np

from polaramc.nn import LayerSpec, Network


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0), 1e-12)
    return float(np.abs(a - b).max() / denom)


def numeric_grad(f, x: np.ndarray, eps: float) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    out = np.zeros_like(x, dtype=float)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        plus = f()
        x[idx] = old - eps
        minus = f()
        x[idx] = old
        out[idx] = (plus - minus) / (2 * eps)
    return out


def check_network(net: Network, x: np.ndarray, seed: int = 0, eps: float = 1e-4):
    """Max relative error over every parameter and the input for loss = sum(out * G)."""
    rng = np.random.default_rng(seed)
    out = net.forward(x, training=False)
    g = rng.standard_normal(out.shape)
    net.zero_grad()
    dx = net.backward(g, need_input_grad=True)
    analytic = [p.grad.copy() for p in net.params]

    def loss():
        return float((net.forward(x, training=False) * g).sum())

    errors = {}
    for k, p in enumerate(net.params):
        errors[f"param{k}"] = rel_error(analytic[k], numeric_grad(loss, p.data, eps))
    errors["input"] = rel_error(dx, numeric_grad(loss, x, eps))
    net._recorded = False
    return errors


# a small net per layer kind, each in float64
LAYER_CASES = {
    "conv2d": ((2, 6, 6), [LayerSpec("conv2d", (3, 3))]),
    "conv2d_single_channel": ((1, 6, 6), [LayerSpec("conv2d", (2, 3))]),
    "conv2d_stride_pad": ((2, 7, 7), [LayerSpec("conv2d", (2, (3, 3), 2, 1))]),
    "relu": ((5,), [LayerSpec("dense", (6,)), LayerSpec("relu")]),
    "maxpool": ((2, 6, 6), [LayerSpec("maxpool", (2,))]),
    "flatten": ((2, 3, 3), [LayerSpec("flatten"), LayerSpec("dense", (3,))]),
    "dense": ((7,), [LayerSpec("dense", (4,))]),
    "softmax": ((5,), [LayerSpec("dense", (4,)), LayerSpec("softmax")]),
}


def build_case(name: str, seed: int = 0):
    shape, specs = LAYER_CASES[name]
    net = Network(shape, specs, seed=seed, dtype=np.float64)
    x = np.random.default_rng(seed + 1).standard_normal((3, *shape))
    # nonzero biases so ReLU kinks are not hit at init
    for p in net.params:
        if p.data.ndim == 1:
            p.data[...] = np.random.default_rng(seed + 2).uniform(-0.5, 0.5, p.shape)
    return net, x


def tiny_cnn(seed: int = 0) -> Network:
    """Small random classifier on 1x8x8 inputs covering every layer kind."""
    specs = [
        LayerSpec("conv2d", (3, 3)),
        LayerSpec("relu"),
        LayerSpec("maxpool", (2,)),
        LayerSpec("flatten"),
        LayerSpec("dense", (5,)),
        LayerSpec("relu"),
        LayerSpec("dense", (4,)),
        LayerSpec("softmax"),
    ]
    net = Network((1, 8, 8), specs, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 3)
    for p in net.params:
        if p.data.ndim == 1:
            p.data[...] = rng.uniform(0.05, 0.3, p.shape)
    return net
