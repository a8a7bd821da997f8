"""Weight containers, layer freezing, optimizers and the training loop.

Two regimes are supported: training from scratch (random init, everything
trainable) and head-only transfer (all layers loaded from a container and
frozen except the final dense layer, which is re-initialized and retrained).
The container's class count never matches a new task's, so re-initializing
the head is the only coherent transfer of "retrain the last layer".

Batch gradients are means, not sums, so the learning rate is independent
of batch size.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    BadMagic,
    DuplicateName,
    EmptyDataset,
    MissingTensor,
    ShapeMismatch,
    TruncatedData,
    VersionUnsupported,
)
from .nn import Network, network_from_id

NSWT_MAGIC = b"NSWT"
NSWT_VERSION = 1


class TransferMode(str, Enum):
    SCRATCH = "scratch"
    HEAD_ONLY = "head_only"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    RMSPROP = "rmsprop"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 40
    optimizer: OptimizerKind = OptimizerKind.RMSPROP
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        self.optimizer = OptimizerKind(self.optimizer)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.rmsprop_epsilon <= 0:
            raise ValueError("rmsprop_epsilon must be positive")


@dataclass
class FreezeMask:
    """Trainable flag per parametric layer name."""

    trainable: dict[str, bool]

    def trainable_names(self) -> set[str]:
        return {name for name, on in self.trainable.items() if on}

    def require_trainable(self):
        if not self.trainable_names():
            raise ValueError("training requires at least one trainable layer")


@dataclass
class WeightContainer:
    """Named float32 tensors plus format metadata."""

    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @property
    def architecture_id(self) -> str:
        return self.metadata.get("architecture_id", "")


@dataclass
class EpochStats:
    loss: float
    accuracy: float


# ---------------------------------------------------------------------------
# NSWT container format
# ---------------------------------------------------------------------------
# "NSWT" | u16 version=1 | u16 metadata-length | UTF-8 JSON metadata |
# u32 tensor count | per tensor: u16 name-length, UTF-8 name, u8 rank,
# u32 dims * rank, f32 values row-major. All integers little-endian.

def save_weights(model: Network, normalization: str = "unit_range") -> bytes:
    """Serialize a model's parameters to an NSWT byte stream."""
    metadata = json.dumps(
        {"architecture_id": model.architecture_id, "normalization": normalization},
        sort_keys=True,
    ).encode("utf-8")
    params = model.parameters()
    out = [NSWT_MAGIC,
           struct.pack("<HH", NSWT_VERSION, len(metadata)),
           metadata,
           struct.pack("<I", len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedData(
                f"needed {n} bytes at offset {self.pos}, "
                f"stream has {len(self.data) - self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(data: bytes) -> WeightContainer:
    """Parse an NSWT stream; validates shapes against the declared
    architecture when the architecture_id is one this build knows."""
    if len(data) < 4 or data[:4] != NSWT_MAGIC:
        raise BadMagic("stream does not start with NSWT magic")
    r = _Reader(data)
    r.take(4)
    version, meta_len = r.unpack("<HH")
    if version != NSWT_VERSION:
        raise VersionUnsupported(f"NSWT version {version} not supported")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagic(f"metadata block is not UTF-8 JSON: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        if name in tensors:
            raise DuplicateName(f"tensor {name!r} declared twice")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n_values = int(np.prod(shape)) if rank else 1
        raw = r.take(n_values * 4)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    container = WeightContainer(tensors=tensors, metadata=metadata)
    reference = network_from_id(container.architecture_id)
    if reference is not None:
        expected = {k: v.shape for k, v in reference.parameters().items()}
        for name, tensor in tensors.items():
            if name in expected and tensor.shape != expected[name]:
                raise ShapeMismatch(
                    f"{name}: container shape {tensor.shape} != "
                    f"{expected[name]} declared by {container.architecture_id}")
    return container


# ---------------------------------------------------------------------------
# Transfer
# ---------------------------------------------------------------------------

def apply_transfer(model: Network, weights: WeightContainer | None,
                   mode: TransferMode, seed: int = 0) -> tuple[Network, FreezeMask]:
    """Initialize a model for one of the two training regimes.

    SCRATCH draws every layer randomly and leaves all of them trainable
    (the container, if any, is ignored). HEAD_ONLY loads every backbone
    tensor from the container, freezes all parametric layers except the
    final dense head, and re-initializes that head from `seed`.
    """
    mode = TransferMode(mode)
    layer_names = [la.name for la in model.parametric_layers()]
    if mode is TransferMode.SCRATCH:
        model.init_random(seed)
        return model, FreezeMask({name: True for name in layer_names})

    if weights is None:
        raise MissingTensor("head_only transfer requires a weight container")
    head = model.head_name
    for name, param in model.parameters().items():
        layer_name = name.rsplit(".", 1)[0]
        if layer_name == head:
            continue
        if name not in weights.tensors:
            raise MissingTensor(f"container lacks tensor {name!r}")
        model.set_parameter(name, weights.tensors[name])
    rng = np.random.default_rng(seed)
    head_layer = next(la for la in model.parametric_layers() if la.name == head)
    from .nn import init_layer_random

    init_layer_random(head_layer, rng, model.dtype)
    return model, FreezeMask({name: name == head for name in layer_names})


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
    """In-place w <- w - lr * g for every tensor present in grads."""
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"{name}: param {p.shape} vs grad {g.shape}")
        p -= (lr * g).astype(p.dtype, copy=False)
    return params


@dataclass
class RMSPropState:
    """Per-parameter squared-gradient accumulators, initialized to zero."""

    accum: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "RMSPropState":
        return cls({name: np.zeros_like(p) for name, p in params.items()})


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: RMSPropState, lr: float, decay: float = 0.9,
                 epsilon: float = 1e-8) -> tuple[dict[str, np.ndarray], RMSPropState]:
    """One RMSProp update: a <- decay*a + (1-decay)*g^2, then
    w <- w - lr * g / (sqrt(a) + epsilon), elementwise and in place."""
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"{name}: param {p.shape} vs grad {g.shape}")
        a = state.accum[name]
        a *= decay
        a += ((1.0 - decay) * g * g).astype(a.dtype, copy=False)
        p -= (lr * g / (np.sqrt(a) + epsilon)).astype(p.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def batch_order(n: int, batch_size: int, rng: np.random.Generator | None,
                shuffle: bool) -> list[np.ndarray]:
    """Index batches for one epoch; the final short batch is kept.

    Exposed so independent oracles can replay the exact batch sequence.
    """
    order = np.arange(n)
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires a generator")
        order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(model: Network, dataset: list[tuple[np.ndarray, int]],
          cfg: TrainConfig, mask: FreezeMask) -> tuple[Network, list[EpochStats]]:
    """Minibatch training with per-batch mean gradients.

    Only layers marked trainable in `mask` are updated; frozen tensors are
    never touched, so they stay bit-identical to their loaded values.
    History holds one entry per epoch: mean loss over batches (weighted by
    batch size) and training accuracy measured on the pre-update forward
    pass of each batch. Fully deterministic given cfg.seed.
    """
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    mask.require_trainable()
    trainable = mask.trainable_names()

    xs = np.stack([np.asarray(x, dtype=model.dtype) for x, _ in dataset])
    ys = np.asarray([label for _, label in dataset], dtype=np.int64)

    params = model.parameters()
    trainable_params = {
        name: p for name, p in params.items()
        if name.rsplit(".", 1)[0] in trainable
    }
    state = RMSPropState.for_params(trainable_params)
    rng = np.random.default_rng(cfg.seed)

    history: list[EpochStats] = []
    for _ in range(cfg.epochs):
        loss_sum = 0.0
        correct = 0
        for idx in batch_order(len(dataset), cfg.batch_size, rng, cfg.shuffle):
            xb, yb = xs[idx], ys[idx]
            loss, grads, probs = model.loss_and_gradients(
                xb, yb, trainable=trainable, return_probs=True)
            correct += int((probs.argmax(axis=-1) == yb).sum())
            loss_sum += loss * len(idx)
            if cfg.optimizer is OptimizerKind.SGD:
                sgd_step(trainable_params, grads, cfg.learning_rate)
            else:
                rmsprop_step(trainable_params, grads, state, cfg.learning_rate,
                             cfg.rmsprop_decay, cfg.rmsprop_epsilon)
        history.append(EpochStats(loss=loss_sum / len(dataset),
                                  accuracy=correct / len(dataset)))
    return model, history


def predict(model: Network, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Predicted class and class probabilities for one input; ties go to
    the lower class index."""
    probs = model.forward(x)
    if probs.ndim != 1:
        raise ShapeMismatch("predict takes a single example, not a batch")
    return int(np.argmax(probs)), probs


def predict_batch(model: Network, xs: np.ndarray) -> np.ndarray:
    """Predicted classes for a batch (n, c, h, w) -> (n,)."""
    probs = model.forward(xs)
    return probs.argmax(axis=-1)
