"""A small convolutional network implemented directly on numpy arrays.

Tensors are channel-last, ``(batch, height, width, channels)``. Every layer
implements ``forward`` and an exact analytic ``backward``; all arithmetic
follows the input dtype so the same code runs in float32 for training and
float64 for finite-difference gradient checks.

``build_model`` constructs the fixed classifier used throughout the package:

    conv 3x3x8 (same) -> relu -> maxpool 2x2
    conv 3x3x16       -> relu -> maxpool 2x2
    conv 3x3x32       -> relu -> maxpool 2x2
    conv 3x3x64       -> relu -> maxpool 2x2
    flatten -> dense 24 -> dense 3 -> softmax

For 224x224 grayscale input the flattened width is 12*12*64 = 9216 and the
parameter total is 245,667, breaking down per layer as 80 + 1,168 + 4,640 +
18,496 + 221,208 + 75. Note on the fourth conv block: a sometimes-quoted
figure of 18,694 for it is a typo — it is inconsistent with the 245,667
total, and 64 filters over 32 input channels force 64*(3*3*32) + 64 = 18,496.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INPUT_SHAPE = (224, 224, 1)
NUM_CLASSES = 3
HIDDEN_UNITS = 24


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class: parameter-free layers inherit the empty accessors."""

    name = ""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return []

    def grad_items(self) -> list[tuple[str, np.ndarray]]:
        return []

    def spec(self) -> dict:
        raise NotImplementedError


class Conv2D(Layer):
    """3x3-style cross-correlation, stride 1, padding "valid" or "same"."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int,
                 kernel: tuple[int, int] = (3, 3), padding: str = "valid",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if padding not in ("valid", "same"):
            raise ValueError(f"unknown padding {padding!r}")
        kh, kw = kernel
        if padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
            raise ValueError("same padding requires odd kernel dimensions")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        self.padding = padding
        shape = (kh, kw, in_channels, out_channels)
        if rng is None:
            self.W = np.zeros(shape, dtype=dtype)
        else:
            fan_in = kh * kw * in_channels
            fan_out = kh * kw * out_channels
            self.W = glorot_uniform(rng, shape, fan_in, fan_out, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x_padded: np.ndarray | None = None
        self._in_hw: tuple[int, int] = (0, 0)

    def _pad(self) -> tuple[int, int]:
        if self.padding == "same":
            return (self.kernel[0] - 1) // 2, (self.kernel[1] - 1) // 2
        return 0, 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValueError(
                f"expected (N, H, W, {self.in_channels}) input, got {x.shape}")
        ph, pw = self._pad()
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else x
        self._x_padded = xp
        self._in_hw = (x.shape[1], x.shape[2])
        windows = sliding_window_view(xp, self.kernel, axis=(1, 2))
        # windows: (N, Ho, Wo, Cin, kh, kw); contract (kh, kw, Cin) with W
        y = np.tensordot(windows, self.W.astype(x.dtype, copy=False),
                         axes=([4, 5, 3], [0, 1, 2]))
        return y + self.b.astype(x.dtype, copy=False)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xp = self._x_padded
        kh, kw = self.kernel
        windows = sliding_window_view(xp, self.kernel, axis=(1, 2))
        self.db = dy.sum(axis=(0, 1, 2)).astype(self.b.dtype, copy=False)
        dW = np.tensordot(windows, dy, axes=([0, 1, 2], [0, 1, 2]))
        self.dW = dW.transpose(1, 2, 0, 3).astype(self.W.dtype, copy=False)
        # full correlation of dy with the spatially flipped kernel gives dx
        dy_p = np.pad(dy, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        dy_windows = sliding_window_view(dy_p, (kh, kw), axis=(1, 2))
        w_flip = self.W[::-1, ::-1, :, :].astype(dy.dtype, copy=False)
        dx_p = np.tensordot(dy_windows, w_flip, axes=([4, 5, 3], [0, 1, 3]))
        ph, pw = self._pad()
        h, w = self._in_hw
        return dx_p[:, ph:ph + h, pw:pw + w, :]

    def param_items(self):
        return [("W", self.W), ("b", self.b)]

    def grad_items(self):
        return [("W", self.dW), ("b", self.db)]

    def spec(self):
        return {"name": self.name, "kind": self.kind,
                "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": list(self.kernel), "padding": self.padding,
                "params": [["W", list(self.W.shape)], ["b", list(self.b.shape)]]}


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, dy.dtype.type(0))

    def spec(self):
        return {"name": self.name, "kind": self.kind, "params": []}


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; trailing odd rows/columns are dropped.

    Ties route the gradient to the first maximum in row-major window order.
    """

    kind = "maxpool2x2"

    def __init__(self):
        self._x_shape: tuple[int, ...] = ()
        self._argmax: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        self._x_shape = x.shape
        win = (x[:, :h2 * 2, :w2 * 2, :]
               .reshape(n, h2, 2, w2, 2, c)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(n, h2, w2, c, 4))
        self._argmax = win.argmax(axis=-1)
        return np.take_along_axis(win, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, h, w, c = self._x_shape
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, h2, w2, c, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, self._argmax[..., None], dy[..., None], axis=-1)
        dx = np.zeros(self._x_shape, dtype=dy.dtype)
        dx[:, :h2 * 2, :w2 * 2, :] = (dwin
                                      .reshape(n, h2, w2, c, 2, 2)
                                      .transpose(0, 1, 4, 2, 5, 3)
                                      .reshape(n, h2 * 2, w2 * 2, c))
        return dx

    def spec(self):
        return {"name": self.name, "kind": self.kind, "params": []}


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._x_shape: tuple[int, ...] = ()

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy.reshape(self._x_shape)

    def spec(self):
        return {"name": self.name, "kind": self.kind, "params": []}


class Dense(Layer):
    """Affine map on (N, in_features); no built-in activation."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            self.W = np.zeros((in_features, out_features), dtype=dtype)
        else:
            self.W = glorot_uniform(rng, (in_features, out_features),
                                    in_features, out_features, dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(
                f"expected (N, {self.in_features}) input, got {x.shape}")
        self._x = x
        return x @ self.W.astype(x.dtype, copy=False) + self.b.astype(x.dtype, copy=False)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.dW = (self._x.T @ dy).astype(self.W.dtype, copy=False)
        self.db = dy.sum(axis=0).astype(self.b.dtype, copy=False)
        return dy @ self.W.T.astype(dy.dtype, copy=False)

    def param_items(self):
        return [("W", self.W), ("b", self.b)]

    def grad_items(self):
        return [("W", self.dW), ("b", self.db)]

    def spec(self):
        return {"name": self.name, "kind": self.kind,
                "in_features": self.in_features, "out_features": self.out_features,
                "params": [["W", list(self.W.shape)], ["b", list(self.b.shape)]]}


class Softmax(Layer):
    """Row-wise softmax, shifted by the row max for stability."""

    kind = "softmax"

    def __init__(self):
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self._y = e / e.sum(axis=-1, keepdims=True)
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        y = self._y
        return (dy - (dy * y).sum(axis=-1, keepdims=True)) * y

    def spec(self):
        return {"name": self.name, "kind": self.kind, "params": []}


_KIND_PREFIX = {"conv2d": "conv", "relu": "relu", "maxpool2x2": "pool",
                "flatten": "flatten", "dense": "dense", "softmax": "softmax"}


class Model:
    """An ordered stack of layers with auto-assigned names (conv1, pool1, ...)."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        counters: dict[str, int] = {}
        for layer in self.layers:
            prefix = _KIND_PREFIX[layer.kind]
            counters[prefix] = counters.get(prefix, 0) + 1
            layer.name = f"{prefix}{counters[prefix]}"

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy: np.ndarray, from_logits: bool = False) -> np.ndarray:
        """Propagate dy back through the stack.

        With ``from_logits=True`` the final Softmax is skipped, for use with
        the fused softmax/cross-entropy gradient computed on the logits.
        """
        layers = self.layers
        if from_logits:
            if not isinstance(layers[-1], Softmax):
                raise ValueError("from_logits requires a trailing softmax layer")
            layers = layers[:-1]
        for layer in reversed(layers):
            dy = layer.backward(dy)
        return dy

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{layer.name}.{key}", arr)
                for layer in self.layers for key, arr in layer.param_items()]

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{layer.name}.{key}", arr)
                for layer in self.layers for key, arr in layer.grad_items()]

    def spec_table(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]


def count_params(model: Model) -> int:
    return sum(arr.size for _, arr in model.parameters())


def build_model(seed: int = 0, dtype=np.float32) -> Model:
    """Construct the fixed four-block classifier with seeded Glorot init.

    Weight tensors are drawn sequentially from one generator in layer order;
    biases start at zero, so a seed pins every initial parameter exactly.
    """
    rng = np.random.default_rng(seed)
    side = INPUT_SHAPE[0] // 2  # block 1: same-padded conv keeps size, pool halves
    for _ in range(3):          # blocks 2-4: valid 3x3 conv shrinks by 2, pool halves
        side = (side - 2) // 2
    flat_features = side * side * 64
    layers: list[Layer] = [
        Conv2D(1, 8, padding="same", rng=rng, dtype=dtype), ReLU(), MaxPool2x2(),
        Conv2D(8, 16, rng=rng, dtype=dtype), ReLU(), MaxPool2x2(),
        Conv2D(16, 32, rng=rng, dtype=dtype), ReLU(), MaxPool2x2(),
        Conv2D(32, 64, rng=rng, dtype=dtype), ReLU(), MaxPool2x2(),
        Flatten(),
        Dense(flat_features, HIDDEN_UNITS, rng=rng, dtype=dtype),
        Dense(HIDDEN_UNITS, NUM_CLASSES, rng=rng, dtype=dtype),
        Softmax(),
    ]
    return Model(layers)


def model_from_specs(specs: list[dict], dtype=np.float32) -> Model:
    """Rebuild an architecture from a spec table; parameters start at zero."""
    layers: list[Layer] = []
    for entry in specs:
        kind = entry["kind"]
        if kind == "conv2d":
            layers.append(Conv2D(entry["in_channels"], entry["out_channels"],
                                 tuple(entry["kernel"]), entry["padding"],
                                 dtype=dtype))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool2x2":
            layers.append(MaxPool2x2())
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "dense":
            layers.append(Dense(entry["in_features"], entry["out_features"],
                                dtype=dtype))
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    model = Model(layers)
    for layer, entry in zip(model.layers, specs):
        declared = [(k, tuple(shape)) for k, shape in entry.get("params", [])]
        actual = [(k, arr.shape) for k, arr in layer.param_items()]
        if declared != actual:
            raise ValueError(
                f"parameter table mismatch for {layer.name}: "
                f"declared {declared}, built {actual}")
    return model
