"""Sequential networks, the classifier architecture and the checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ShapeError, StateError
from .layers import LAYER_KINDS, LAYER_TYPES, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, Softmax, Tensor

CLASSIFIER = 0
COMPENSATOR = 1


@dataclass
class LayerSpec:
    kind: str
    args: tuple = field(default_factory=tuple)

    def make(self) -> Layer:
        return LAYER_KINDS[self.kind](*self.args)


class Network:
    """An ordered stack of layers.

    ``input_shape`` is given channels-first, ``(C, H, W)``, or flat ``(D,)``.
    Batches passed to :meth:`forward` use the same convention with a leading
    batch axis.
    """

    def __init__(self, input_shape, specs, seed: int = 0, dtype=np.float64, kind: int = CLASSIFIER):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.kind = kind
        self.training = False
        init_rng = np.random.default_rng([self.seed, 0])
        shape = self._internal_shape(self.input_shape)
        self.layers: list[Layer] = []
        for i, spec in enumerate(self.specs):
            layer = spec.make()
            try:
                shape = layer.build(shape, init_rng, self.dtype)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng([self.seed, 1, i])
            self.layers.append(layer)
        self.output_shape = shape
        self._recorded = False

    @staticmethod
    def _internal_shape(shape):
        if len(shape) == 3:
            c, h, w = shape
            return (h, w, c)
        return shape

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, batch, training: bool = False) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        if len(self.input_shape) == 3 and x.ndim == 3 and self.input_shape[0] == 1:
            x = x[:, None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"batch shape {x.shape[1:]} does not match network input {self.input_shape}")
        if x.ndim == 4:
            x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        self.training = training
        for layer in self.layers:
            x = layer.forward(x, training)
        self._recorded = True
        return x

    def backward(self, grad, need_input_grad: bool = False, skip_softmax: bool = False):
        """Backpropagate ``grad`` (d loss / d output) and fill every parameter's grad slot.

        With ``skip_softmax`` the incoming gradient is taken w.r.t. the logits
        feeding a final softmax (the fused softmax + cross-entropy path).
        Returns the gradient w.r.t. the input batch (channels-first) when
        ``need_input_grad`` is set.
        """
        if not self._recorded:
            raise StateError("backward called before forward")
        self._recorded = False
        layers = self.layers
        if skip_softmax:
            if not isinstance(layers[-1], Softmax):
                raise StateError("skip_softmax requires a final softmax layer")
            layers[-1]._cache = None
            layers = layers[:-1]
        g = np.asarray(grad, dtype=self.dtype)
        for k in range(len(layers) - 1, -1, -1):
            g = layers[k].backward(g, need_input_grad=need_input_grad or k > 0)
        if need_input_grad and g.ndim == 4:
            g = g.transpose(0, 3, 1, 2)
        return g if need_input_grad else None

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def get_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def set_state(self, state):
        params = self.params
        if len(state) != len(params):
            raise ShapeError("state does not match network parameters")
        for p, value in zip(params, state):
            if value.shape != p.shape:
                raise ShapeError(f"parameter {p.name}: shape {value.shape} != {p.shape}")
            p.data[...] = value

    def copy(self) -> "Network":
        clone = Network(self.input_shape, self.specs, self.seed, self.dtype, self.kind)
        clone.set_state(self.get_state())
        return clone

    def astype(self, dtype) -> "Network":
        clone = Network(self.input_shape, self.specs, self.seed, dtype, self.kind)
        clone.set_state([s.astype(dtype) for s in self.get_state()])
        return clone


def amc_cnn_specs(n_classes: int = 4, dropout: float = 0.5):
    """Four 3x3 conv layers (16, 16, 32, 32) with two 2x2 pools, then dense 128 / 64 / classes."""
    return [
        LayerSpec("conv2d", (16, 3)),
        LayerSpec("relu"),
        LayerSpec("conv2d", (16, 3)),
        LayerSpec("relu"),
        LayerSpec("maxpool", (2,)),
        LayerSpec("conv2d", (32, 3)),
        LayerSpec("relu"),
        LayerSpec("conv2d", (32, 3)),
        LayerSpec("relu"),
        LayerSpec("maxpool", (2,)),
        LayerSpec("flatten"),
        LayerSpec("dense", (128,)),
        LayerSpec("relu"),
        LayerSpec("dropout", (dropout,)),
        LayerSpec("dense", (64,)),
        LayerSpec("relu"),
        LayerSpec("dense", (n_classes,)),
        LayerSpec("softmax"),
    ]


def build_amc_cnn(input_hw=(36, 36), seed: int = 0, dtype=np.float32, n_classes: int = 4, dropout: float = 0.5) -> Network:
    return Network((1, *input_hw), amc_cnn_specs(n_classes, dropout), seed=seed, dtype=dtype)


# --------------------------------------------------------------------------
# checkpoint format (little endian)
#   header : magic "PAMC", version u16, network kind u8, seed i64,
#            input ndim u8, input dims u32..., layer count u32
#   layer  : kind tag u8, hyperparameter count u8, hyperparameters f64...,
#            parameter count u8, then per parameter: ndim u8, dims u32..., f64 data

MAGIC = b"PAMC"
VERSION = 1


def save_checkpoint(net: Network, path) -> None:
    out = bytearray()
    out += MAGIC + struct.pack("<HBq", VERSION, net.kind, net.seed)
    out += struct.pack("<B", len(net.input_shape)) + struct.pack(f"<{len(net.input_shape)}I", *net.input_shape)
    out += struct.pack("<I", len(net.layers))
    for layer in net.layers:
        hp = layer.hyperparams()
        out += struct.pack("<BB", layer.tag, len(hp)) + struct.pack(f"<{len(hp)}d", *hp)
        out += struct.pack("<B", len(layer.params))
        for p in layer.params:
            out += struct.pack("<B", p.data.ndim) + struct.pack(f"<{p.data.ndim}I", *p.shape)
            out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path, dtype=np.float32, expect_kind: int | None = None) -> Network:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return _parse_checkpoint(raw, dtype, expect_kind)
    except (struct.error, ValueError, KeyError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None


def _parse_checkpoint(raw: bytes, dtype, expect_kind):
    if raw[:4] != MAGIC:
        raise DataError("not a network checkpoint (bad magic)")
    pos = 4
    version, kind, seed = struct.unpack_from("<HBq", raw, pos)
    pos += struct.calcsize("<HBq")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if expect_kind is not None and kind != expect_kind:
        raise DataError(f"checkpoint holds network kind {kind}, expected {expect_kind}")
    (ndim,) = struct.unpack_from("<B", raw, pos)
    pos += 1
    input_shape = struct.unpack_from(f"<{ndim}I", raw, pos)
    pos += 4 * ndim
    (n_layers,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    specs, state = [], []
    for _ in range(n_layers):
        tag, n_hp = struct.unpack_from("<BB", raw, pos)
        pos += 2
        hp = struct.unpack_from(f"<{n_hp}d", raw, pos)
        pos += 8 * n_hp
        cls = LAYER_TYPES[tag]
        args = tuple(hp) if cls is Dropout else tuple(int(v) for v in hp)
        if cls is Conv2D:
            args = (args[0], (args[1], args[2]), args[3], args[4])
        elif cls is MaxPool2D:
            args = ((args[0], args[1]),)
        specs.append(LayerSpec(cls.kind, args))
        (n_params,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        for _ in range(n_params):
            (pdim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{pdim}I", raw, pos)
            pos += 4 * pdim
            count = int(np.prod(shape))
            state.append(np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(dtype))
            pos += 8 * count
    if pos != len(raw):
        raise DataError("trailing bytes after last layer")
    net = Network(input_shape, specs, seed=seed, dtype=dtype, kind=kind)
    net.set_state(state)
    return net


__all__ = [
    "LayerSpec",
    "Network",
    "amc_cnn_specs",
    "build_amc_cnn",
    "save_checkpoint",
    "load_checkpoint",
    "CLASSIFIER",
    "COMPENSATOR",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool2D",
    "ReLU",
    "Softmax",
]
