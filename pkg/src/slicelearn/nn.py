"""Minimal dense-tensor CNN engine: conv, max-pool, ReLU, dense, global
average pooling and softmax, with exact forward semantics and full
reverse-mode backpropagation.

Layers operate on batched arrays of shape (n, c, h, w); single examples
(c, h, w) are accepted everywhere and promoted internally. Convolution is
cross-correlation (no kernel flip), the modern CNN convention. Max-pool
ties resolve to the first position in row-major window order so the
backward pass is exactly reproducible.

Two network families are provided at desk scale: a VGG-style stack of
conv/pool pairs feeding dense layers ("micro_vgg"), and a variant whose
dense stack is replaced by global average pooling ("micro_gap").
F64 precision exists to make finite-difference tests sharp; F32 is the
training default.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadLabel, NonFinite, ShapeMismatch

CROSS_ENTROPY_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    p_i = exp(z_i - max z) / sum_j exp(z_j - max z); strictly positive,
    sums to 1, invariant to adding a constant to all logits.
    """
    z = np.asarray(logits)
    if not np.isfinite(z).all():
        raise NonFinite("softmax input contains NaN or Inf")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-ln(probs[label] + floor); the floor keeps the loss finite."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise BadLabel(f"label {label} outside [0, {probs.shape[-1]})")
    return float(-np.log(probs[label] + CROSS_ENTROPY_FLOOR))


def _as_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    """Promote a single example to a batch of one; report whether we did."""
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeMismatch(f"expected rank {rank} or {rank + 1}, got shape {x.shape}")


class Layer:
    """Base layer: stateless unless parametric; caches its forward inputs
    so backward can run without re-materializing them."""

    name = "layer"
    param_names: tuple[str, ...] = ()

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, need_param_grad: bool = False,
                 need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    @property
    def has_params(self) -> bool:
        return bool(self.param_names)

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.param_names}

    def grads(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, "grad_" + n) for n in self.param_names}


class Conv2D(Layer):
    """2D cross-correlation with zero padding and integer stride.

    out[o, i, j] = bias[o] + sum_{c,u,v} weight[o,c,u,v] *
                   x_padded[c, i*stride + u, j*stride + v]
    """

    param_names = ("weight", "bias")

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, name: str = "conv",
                 dtype=np.float32):
        if kernel < 1 or stride < 1 or padding < 0:
            raise ValueError("kernel/stride must be >= 1, padding >= 0")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.name = name
        self.weight = np.zeros((out_channels, in_channels, kernel, kernel), dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeMismatch(
                f"{self.name}: expected {self.in_channels} input channels, got {c}")
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"{self.name}: kernel does not fit input {in_shape}")
        return (self.out_channels, oh, ow)

    def forward(self, x):
        x, squeeze = _as_batch(x, 3)
        self._squeezed = squeeze
        _, oh, ow = self.out_shape(x.shape[1:])
        k, s, p = self.kernel, self.stride, self.padding
        if p:
            x_padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        else:
            x_padded = x
        n = x.shape[0]
        windows = sliding_window_view(x_padded, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        # one contiguous im2col matrix, reused by the backward GEMMs
        cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
        cols = cols.reshape(n * oh * ow, self.in_channels * k * k)
        self._cols = cols
        self._out_dims = (n, oh, ow)
        self._padded_shape = x_padded.shape
        wmat = self.weight.reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.bias
        out = out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)
        return out[0] if squeeze else out

    def backward(self, grad, need_param_grad=False, need_input_grad=True):
        grad, _ = _as_batch(grad, 3)
        n, oh, ow = self._out_dims
        k, s, p = self.kernel, self.stride, self.padding
        gradmat = np.ascontiguousarray(grad.transpose(0, 2, 3, 1))
        gradmat = gradmat.reshape(n * oh * ow, self.out_channels)
        if need_param_grad:
            self.grad_weight = (gradmat.T @ self._cols).reshape(self.weight.shape)
            self.grad_bias = gradmat.sum(axis=0)
        if not need_input_grad:
            return None
        wmat = self.weight.reshape(self.out_channels, -1)
        dcols = (gradmat @ wmat).reshape(n, oh, ow, self.in_channels, k, k)
        dx_padded = np.zeros(self._padded_shape, dtype=grad.dtype)
        for u in range(k):
            for v in range(k):
                dx_padded[:, :, u:u + oh * s:s, v:v + ow * s:s] += \
                    dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        dx = dx_padded[:, :, p:dx_padded.shape[2] - p, p:dx_padded.shape[3] - p] \
            if p else dx_padded
        return dx[0] if self._squeezed else dx


class MaxPool2D(Layer):
    """Per-channel window maximum. Records argmax positions (first in
    row-major window order on ties) for the backward pass."""

    def __init__(self, window: int, stride: int | None = None, name: str = "pool"):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.stride = stride if stride is not None else window
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        self.name = name

    def out_shape(self, in_shape):
        c, h, w = in_shape
        oh = (h - self.window) // self.stride + 1
        ow = (w - self.window) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"{self.name}: window does not fit input {in_shape}")
        return (c, oh, ow)

    def forward(self, x):
        x, squeeze = _as_batch(x, 3)
        self._squeezed = squeeze
        self.out_shape(x.shape[1:])
        k, s = self.window, self.stride
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n, c, oh, ow = windows.shape[:4]
        flat = windows.reshape(n, c, oh, ow, k * k)
        self._argmax = flat.argmax(axis=-1)
        self._in_shape = x.shape
        out = np.take_along_axis(flat, self._argmax[..., None], axis=-1)[..., 0]
        return out[0] if squeeze else out

    def backward(self, grad, need_param_grad=False, need_input_grad=True):
        if not need_input_grad:
            return None
        grad, _ = _as_batch(grad, 3)
        n, c, oh, ow = grad.shape
        k, s = self.window, self.stride
        rows = (np.arange(oh) * s)[None, None, :, None] + self._argmax // k
        cols = (np.arange(ow) * s)[None, None, None, :] + self._argmax % k
        dx = np.zeros(self._in_shape, dtype=grad.dtype)
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dx, (ni, ci, rows, cols), grad)
        return dx[0] if self._squeezed else dx


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad, need_param_grad=False, need_input_grad=True):
        if not need_input_grad:
            return None
        return np.where(self._mask, grad, np.zeros((), dtype=grad.dtype))


class Dense(Layer):
    """Fully connected layer: y = W @ flatten(x) + b, weight shape (out, in)."""

    param_names = ("weight", "bias")

    def __init__(self, in_features: int, out_features: int, name: str = "dense",
                 dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        self.weight = np.zeros((out_features, in_features), dtype=dtype)
        self.bias = np.zeros(out_features, dtype=dtype)

    @property
    def fan_in(self) -> int:
        return self.in_features

    def out_shape(self, in_shape):
        flat = int(np.prod(in_shape))
        if flat != self.in_features:
            raise ShapeMismatch(
                f"{self.name}: expected {self.in_features} input features, got {flat} "
                f"from shape {in_shape}")
        return (self.out_features,)

    def forward(self, x):
        # batch vs single example is disambiguated via in_features
        if x.ndim >= 2 and int(np.prod(x.shape[1:])) == self.in_features:
            batch = x.reshape(x.shape[0], self.in_features)
            self._squeezed = False
            self._in_shape = x.shape
        elif int(np.prod(x.shape)) == self.in_features:
            batch = x.reshape(1, self.in_features)
            self._squeezed = True
            self._in_shape = x.shape
        else:
            raise ShapeMismatch(
                f"{self.name}: cannot interpret input shape {x.shape} "
                f"as {self.in_features} features")
        self._x = batch
        out = batch @ self.weight.T + self.bias
        return out[0] if self._squeezed else out

    def backward(self, grad, need_param_grad=False, need_input_grad=True):
        grad, _ = _as_batch(grad, 1)
        if need_param_grad:
            self.grad_weight = grad.T @ self._x
            self.grad_bias = grad.sum(axis=0)
        if not need_input_grad:
            return None
        return (grad @ self.weight).reshape(self._in_shape)


class GlobalAvgPool(Layer):
    """Per-channel arithmetic mean over spatial positions: (c, h, w) -> (c,)."""

    def __init__(self, name: str = "gap"):
        self.name = name

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c,)

    def forward(self, x):
        x, squeeze = _as_batch(x, 3)
        self._squeezed = squeeze
        self._in_shape = x.shape
        out = x.mean(axis=(2, 3))
        return out[0] if squeeze else out

    def backward(self, grad, need_param_grad=False, need_input_grad=True):
        if not need_input_grad:
            return None
        grad, _ = _as_batch(grad, 1)
        n, c, h, w = self._in_shape
        scale = np.asarray(1.0 / (h * w), dtype=grad.dtype)
        dx = np.broadcast_to((grad * scale)[:, :, None, None],
                             self._in_shape).copy()
        return dx[0] if self._squeezed else dx


class Softmax(Layer):
    """Final normalization layer; its gradient is always fused with the
    cross-entropy loss in Network.loss_and_gradients."""

    def __init__(self, name: str = "softmax"):
        self.name = name

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"softmax expects a vector, got shape {in_shape}")
        return in_shape

    def forward(self, x):
        return softmax(x)


class Network:
    """An ordered layer stack ending in Softmax, with statically checked
    shape composition and named parameters ("<layer>.weight" etc.)."""

    def __init__(self, input_shape: tuple[int, int, int], layers: list[Layer],
                 architecture_id: str = "", dtype=np.float32):
        if not layers or not isinstance(layers[-1], Softmax):
            raise ShapeMismatch("network must end in a Softmax layer")
        names = [la.name for la in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique, got {names}")
        self.input_shape = tuple(input_shape)
        self.layers = layers
        self.architecture_id = architecture_id
        self.dtype = np.dtype(dtype)
        # static shape composition; raises ShapeMismatch on a bad stack
        self.shapes = [self.input_shape]
        for layer in layers:
            self.shapes.append(layer.out_shape(self.shapes[-1]))
        self.n_classes = self.shapes[-1][0]
        for layer in layers:
            for pname in layer.param_names:
                setattr(layer, pname, getattr(layer, pname).astype(self.dtype))

    # -- parameters ---------------------------------------------------------

    def parametric_layers(self) -> list[Layer]:
        return [la for la in self.layers if la.has_params]

    @property
    def head_name(self) -> str:
        """Name of the final trainable classifier layer (the last Dense)."""
        dense = [la for la in self.layers if isinstance(la, Dense)]
        if not dense:
            raise ValueError("network has no Dense layer")
        return dense[-1].name

    def parameters(self) -> dict[str, np.ndarray]:
        """Live (mutable) references to every parameter tensor."""
        out = {}
        for layer in self.parametric_layers():
            for pname, value in layer.params().items():
                out[f"{layer.name}.{pname}"] = value
        return out

    def set_parameter(self, name: str, value: np.ndarray):
        layer_name, pname = name.rsplit(".", 1)
        for layer in self.parametric_layers():
            if layer.name == layer_name and pname in layer.param_names:
                current = getattr(layer, pname)
                if current.shape != value.shape:
                    raise ShapeMismatch(
                        f"{name}: expected shape {current.shape}, got {value.shape}")
                setattr(layer, pname, np.asarray(value, dtype=self.dtype))
                return
        raise KeyError(name)

    def init_random(self, seed: int):
        """He-style init: weights ~ N(0, sqrt(2/fan_in)), biases 0, from a
        seeded generator; identical seed gives bit-identical parameters."""
        rng = np.random.default_rng(seed)
        for layer in self.parametric_layers():
            init_layer_random(layer, rng, self.dtype)
        return self

    # -- execution ----------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for one example (c,h,w) or a batch (n,c,h,w)."""
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def loss_and_gradients(self, x: np.ndarray, labels,
                           trainable: set[str] | None = None,
                           return_probs: bool = False):
        """Mean cross-entropy over the batch and its exact gradients.

        Returns (loss, grads) where grads maps "<layer>.<param>" to an array
        of the parameter's shape, restricted to `trainable` layer names when
        given (frozen layers are omitted, and backpropagation stops below
        the deepest trainable layer). With return_probs, the batch's class
        probabilities are appended to the tuple.
        """
        x = np.asarray(x, dtype=self.dtype)
        x, _ = _as_batch(x, 3)
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if labels.shape[0] != x.shape[0]:
            raise ShapeMismatch(
                f"{labels.shape[0]} labels for a batch of {x.shape[0]}")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise BadLabel(f"labels must lie in [0, {self.n_classes})")

        h = x
        for layer in self.layers[:-1]:
            h = layer.forward(h)
        probs = softmax(h)
        n = x.shape[0]
        loss = float(-np.log(probs[np.arange(n), labels]
                             + CROSS_ENTROPY_FLOOR).mean())

        selected = [
            i for i, la in enumerate(self.layers)
            if la.has_params and (trainable is None or la.name in trainable)
        ]
        if not selected:
            return (loss, {}, probs) if return_probs else (loss, {})
        lowest = min(selected)

        # fused softmax + cross-entropy gradient at the logits
        grad = probs.astype(self.dtype, copy=True)
        grad[np.arange(n), labels] -= 1.0
        grad /= n

        for i in range(len(self.layers) - 2, lowest - 1, -1):
            layer = self.layers[i]
            grad = layer.backward(grad, need_param_grad=(i in selected),
                                  need_input_grad=(i > lowest))

        grads = {}
        for i in selected:
            layer = self.layers[i]
            for pname, g in layer.grads().items():
                grads[f"{layer.name}.{pname}"] = g
        return (loss, grads, probs) if return_probs else (loss, grads)


def init_layer_random(layer: Layer, rng: np.random.Generator, dtype):
    """Draw one parametric layer's weights from N(0, sqrt(2/fan_in))."""
    std = float(np.sqrt(2.0 / layer.fan_in))
    layer.weight = rng.normal(0.0, std, size=layer.weight.shape).astype(dtype)
    layer.bias = np.zeros_like(layer.bias)


# ---------------------------------------------------------------------------
# Desk-scale architectures
# ---------------------------------------------------------------------------

MICRO_VGG = "micro_vgg"
MICRO_GAP = "micro_gap"
ARCHITECTURES = (MICRO_VGG, MICRO_GAP)


def _conv_stack(dtype) -> list[Layer]:
    return [
        Conv2D(3, 8, kernel=3, stride=1, padding=1, name="conv1", dtype=dtype),
        ReLU(name="relu1"),
        MaxPool2D(2, 2, name="pool1"),
        Conv2D(8, 8, kernel=3, stride=1, padding=1, name="conv2", dtype=dtype),
        ReLU(name="relu2"),
        MaxPool2D(2, 2, name="pool2"),
        Conv2D(8, 16, kernel=3, stride=1, padding=1, name="conv3", dtype=dtype),
        ReLU(name="relu3"),
        MaxPool2D(2, 2, name="pool3"),
    ]


def _compose(input_shape, layers) -> tuple:
    shape = input_shape
    for layer in layers:
        shape = layer.out_shape(shape)
    return shape


def micro_vgg(input_size: int, n_classes: int = 2, dtype=np.float32) -> Network:
    """VGG-style stack: three conv/pool pairs, then two dense layers."""
    if input_size < 8:
        raise ShapeMismatch("micro_vgg needs input_size >= 8")
    input_shape = (3, input_size, input_size)
    stack = _conv_stack(dtype)
    c, h, w = _compose(input_shape, stack)
    stack += [
        Dense(c * h * w, 32, name="dense1", dtype=dtype),
        ReLU(name="relu4"),
        Dense(32, n_classes, name="dense2", dtype=dtype),
        Softmax(),
    ]
    return Network(input_shape, stack,
                   architecture_id=f"{MICRO_VGG}-{input_size}-{n_classes}",
                   dtype=dtype)


def micro_gap(input_size: int, n_classes: int = 2, dtype=np.float32) -> Network:
    """Same conv stack, but the dense block is replaced by global average
    pooling feeding one classifier layer."""
    if input_size < 8:
        raise ShapeMismatch("micro_gap needs input_size >= 8")
    input_shape = (3, input_size, input_size)
    stack = _conv_stack(dtype)
    c, _, _ = _compose(input_shape, stack)
    stack += [
        GlobalAvgPool(name="gap"),
        Dense(c, n_classes, name="dense1", dtype=dtype),
        Softmax(),
    ]
    return Network(input_shape, stack,
                   architecture_id=f"{MICRO_GAP}-{input_size}-{n_classes}",
                   dtype=dtype)


def build_architecture(name: str, input_size: int, n_classes: int = 2,
                       dtype=np.float32) -> Network:
    if name == MICRO_VGG:
        return micro_vgg(input_size, n_classes, dtype)
    if name == MICRO_GAP:
        return micro_gap(input_size, n_classes, dtype)
    raise ValueError(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}")


def network_from_id(architecture_id: str, dtype=np.float32) -> Network | None:
    """Rebuild a network from an architecture id like "micro_vgg-32-2".

    Returns None for ids this build does not recognize (foreign containers
    are loadable; shape validation is skipped for them).
    """
    parts = architecture_id.rsplit("-", 2)
    if len(parts) != 3 or parts[0] not in ARCHITECTURES:
        return None
    try:
        size, classes = int(parts[1]), int(parts[2])
    except ValueError:
        return None
    return build_architecture(parts[0], size, classes, dtype)
