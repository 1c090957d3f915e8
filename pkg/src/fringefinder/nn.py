"""Micro-CNN classifier: layers, exact gradients, SGD training, MNV1 persistence.

The network is small enough to train on a desktop CPU from scratch, with
a layer vocabulary of valid convolution (stride 1), ReLU, 2x2-style max
pooling, flatten, dense, and a final softmax over exactly two classes.
Class order in every output row is (deformation, background), so a label
of 1 (deformation) maps to class index 0.

Parameters are float32 in production; `Model.astype(np.float64)` yields
the 64-bit twin used only for finite-difference gradient verification.
Every training path is a pure function of seeds and inputs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .raster import read_raster
from .synthgen import SampleRecord

LOG_CLIP = 1e-12

TAG_CONV = 1
TAG_RELU = 2
TAG_MAXPOOL = 3
TAG_FLATTEN = 4
TAG_DENSE = 5
TAG_SOFTMAX = 6
TAG_SVM = 7

DEFAULT_LAYERS = (
    ("conv", 8, 5),
    ("relu",),
    ("maxpool", 2),
    ("conv", 16, 5),
    ("relu",),
    ("maxpool", 2),
    ("conv", 32, 3),
    ("relu",),
    ("maxpool", 2),
    ("flatten",),
    ("dense", 64),
    ("relu",),
    ("dense", 2),
    ("softmax",),
)


class ModelFormatError(ValueError):
    """Malformed MNV1 file; the message names the offending part."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture + init seed. Defaults pair with 224-px patches (224 = 4 * 56)."""

    input_side: int = 56
    channels_in: int = 2
    layers: tuple = DEFAULT_LAYERS
    seed: int = 0

    def normalized_layers(self) -> tuple[tuple, ...]:
        return tuple(tuple(spec) for spec in self.layers)


@dataclass(frozen=True)
class Hyper:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


class Conv:
    tag = TAG_CONV

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = w
        self.b = b

    def forward(self, x):
        return kernels.conv2d_forward(x, self.w, self.b), x

    def backward(self, dy, cache):
        dx, dw, db = kernels.conv2d_backward(cache, self.w, dy)
        return dx, [dw, db]

    def params(self):
        return [self.w, self.b]

    def decayable(self):
        return [True, False]


class ReLU:
    tag = TAG_RELU

    def forward(self, x):
        return np.maximum(x, 0), x

    def backward(self, dy, cache):
        return dy * (cache > 0), []

    def params(self):
        return []

    def decayable(self):
        return []


class MaxPool:
    tag = TAG_MAXPOOL

    def __init__(self, size: int):
        self.size = size

    def forward(self, x):
        y, arg = kernels.maxpool2_forward(x, self.size)
        return y, (x.shape, arg)

    def backward(self, dy, cache):
        xshape, arg = cache
        return kernels.maxpool2_backward(xshape, arg, dy, self.size), []

    def params(self):
        return []

    def decayable(self):
        return []


class Flatten:
    tag = TAG_FLATTEN

    def forward(self, x):
        return np.ascontiguousarray(x.reshape(x.shape[0], -1)), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []

    def params(self):
        return []

    def decayable(self):
        return []


class Dense:
    tag = TAG_DENSE

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = w  # [out, in]
        self.b = b

    def forward(self, x):
        return x @ self.w.T + self.b, x

    def backward(self, dy, cache):
        dx = dy @ self.w
        dw = dy.T @ cache
        db = dy.sum(axis=0)
        return dx, [dw, db]

    def params(self):
        return [self.w, self.b]

    def decayable(self):
        return [True, False]


class Softmax:
    tag = TAG_SOFTMAX

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True), None

    def backward(self, dy, cache):  # pragma: no cover - loss path bypasses this
        raise NotImplementedError("softmax gradient is fused into the loss")

    def params(self):
        return []

    def decayable(self):
        return []


@dataclass
class Model:
    layers: list
    channels_in: int = 2
    input_side: int | None = None

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def decay_flags(self) -> list[bool]:
        out = []
        for layer in self.layers:
            out.extend(layer.decayable())
        return out

    def set_parameters(self, values: list[np.ndarray]) -> None:
        i = 0
        for layer in self.layers:
            if isinstance(layer, Conv) or isinstance(layer, Dense):
                layer.w = values[i]
                layer.b = values[i + 1]
                i += 2
        if i != len(values):
            raise ValueError(f"expected {i} parameter arrays, got {len(values)}")

    def astype(self, dtype) -> "Model":
        clone = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                clone.append(Conv(layer.w.astype(dtype), layer.b.astype(dtype)))
            elif isinstance(layer, Dense):
                clone.append(Dense(layer.w.astype(dtype), layer.b.astype(dtype)))
            elif isinstance(layer, MaxPool):
                clone.append(MaxPool(layer.size))
            else:
                clone.append(type(layer)())
        return Model(layers=clone, channels_in=self.channels_in, input_side=self.input_side)


def _simulate_shapes(specs, channels_in, input_side):
    """Walk layer specs, returning (per-layer input shape info, final features)."""
    shape = ("img", channels_in, input_side, input_side)
    resolved = []
    for spec in specs:
        kind = spec[0]
        if kind == "conv":
            if shape[0] != "img":
                raise ValueError("conv after flatten is not supported")
            _, c, h, w = shape
            out_c, k = spec[1], spec[2]
            if h < k or w < k:
                raise ValueError(f"conv kernel {k} larger than input {h}x{w}")
            resolved.append(("conv", out_c, c, k))
            shape = ("img", out_c, h - k + 1, w - k + 1)
        elif kind == "relu":
            resolved.append(("relu",))
        elif kind == "maxpool":
            size = spec[1]
            _, c, h, w = shape
            if h // size == 0 or w // size == 0:
                raise ValueError(f"maxpool {size} collapses input {h}x{w}")
            resolved.append(("maxpool", size))
            shape = ("img", c, h // size, w // size)
        elif kind == "flatten":
            _, c, h, w = shape
            resolved.append(("flatten",))
            shape = ("flat", c * h * w)
        elif kind == "dense":
            if shape[0] != "flat":
                raise ValueError("dense requires a flattened input")
            out = spec[1]
            resolved.append(("dense", out, shape[1]))
            shape = ("flat", out)
        elif kind == "softmax":
            resolved.append(("softmax",))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    if shape[0] != "flat" or shape[1] != 2:
        raise ValueError(f"network must end with exactly 2 class scores, got {shape}")
    return resolved


def build_model(config: ModelConfig) -> Model:
    """He-style initialization (std sqrt(2/fan_in)) from the seeded generator."""
    specs = config.normalized_layers()
    resolved = _simulate_shapes(specs, config.channels_in, config.input_side)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    layers = []
    for item in resolved:
        kind = item[0]
        if kind == "conv":
            _, out_c, in_c, k = item
            fan_in = in_c * k * k
            w = (rng.standard_normal((out_c, in_c, k, k)) * math.sqrt(2.0 / fan_in)).astype(
                np.float32
            )
            layers.append(Conv(w, np.zeros(out_c, dtype=np.float32)))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool":
            layers.append(MaxPool(item[1]))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "dense":
            _, out, in_f = item
            w = (rng.standard_normal((out, in_f)) * math.sqrt(2.0 / in_f)).astype(np.float32)
            layers.append(Dense(w, np.zeros(out, dtype=np.float32)))
        elif kind == "softmax":
            layers.append(Softmax())
    return Model(layers=layers, channels_in=config.channels_in, input_side=config.input_side)


def encode_patch(values: np.ndarray, input_side: int) -> np.ndarray:
    """Circular (cos, sin) encoding + average-pool downsample to input_side.

    Masked pixels contribute 0 to both channels. The circular encoding is
    continuous across the +-pi branch seam, unlike raw wrapped phase.
    """
    size = values.shape[0]
    if values.shape[0] != values.shape[1]:
        raise ValueError(f"encode_patch expects a square patch, got {values.shape}")
    if size % input_side != 0:
        raise ValueError(f"patch size {size} not divisible by input side {input_side}")
    f = size // input_side
    v = values.astype(np.float64)
    mask = np.isnan(v)
    c = np.where(mask, 0.0, np.cos(v))
    s = np.where(mask, 0.0, np.sin(v))
    enc = np.stack([c, s])
    pooled = enc.reshape(2, input_side, f, input_side, f).mean(axis=(2, 4))
    return pooled.astype(np.float32)


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Class probabilities [N, 2]; each row sums to 1 (deformation first)."""
    expected_side = model.input_side if model.input_side is not None else "S"
    if (
        batch.ndim != 4
        or batch.shape[1] != model.channels_in
        or batch.shape[2] != batch.shape[3]
        or (model.input_side is not None and batch.shape[2] != model.input_side)
    ):
        raise ValueError(
            f"batch shape {batch.shape} does not match model input "
            f"(N, {model.channels_in}, {expected_side}, {expected_side})"
        )
    x = batch
    for layer in model.layers:
        x, _ = layer.forward(x)
    return x


def _forward_logits(model: Model, batch: np.ndarray):
    if not isinstance(model.layers[-1], Softmax):
        raise ValueError("model must end with a softmax layer")
    x = batch
    caches = []
    for layer in model.layers[:-1]:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def _log_softmax(z):
    zs = z - z.max(axis=1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def label_to_class(labels: np.ndarray) -> np.ndarray:
    """Dataset label (1=deformation) -> class index (0=deformation)."""
    return 1 - np.asarray(labels, dtype=np.int64)


def loss_and_gradients(
    model: Model, batch: np.ndarray, labels: np.ndarray, weight_decay: float = 0.0
):
    """Mean cross-entropy + (weight_decay/2) * sum(w^2) and exact gradients.

    Gradients are returned in `model.parameters()` order. The decay term
    covers weights only, never biases.
    """
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n = batch.shape[0]
    cls = label_to_class(labels)
    logits, caches = _forward_logits(model, batch)
    logp = _log_softmax(logits)
    p = np.exp(logp)
    picked = np.maximum(p[np.arange(n), cls], LOG_CLIP)
    loss = -np.log(picked).mean()

    dlogits = p.copy()
    dlogits[np.arange(n), cls] -= 1.0
    dlogits /= n
    dlogits = dlogits.astype(batch.dtype)

    grads_rev = []
    dy = dlogits
    for layer, cache in zip(reversed(model.layers[:-1]), reversed(caches)):
        dy, param_grads = layer.backward(dy, cache)
        grads_rev.extend(reversed(param_grads))
    grads = list(reversed(grads_rev))

    if weight_decay:
        params = model.parameters()
        for i, (w, is_weight) in enumerate(zip(params, model.decay_flags())):
            if is_weight:
                loss += 0.5 * weight_decay * float((w.astype(np.float64) ** 2).sum())
                grads[i] = grads[i] + (weight_decay * w).astype(grads[i].dtype)
    return float(loss), grads


def encode_samples(
    samples: list[SampleRecord], input_side: int
) -> tuple[np.ndarray, np.ndarray]:
    """Load raster patches from disk and encode them once for training."""
    xs = np.empty((len(samples), 2, input_side, input_side), dtype=np.float32)
    ys = np.empty(len(samples), dtype=np.int64)
    for i, rec in enumerate(samples):
        r = read_raster(rec.path)
        xs[i] = encode_patch(r.values, input_side)
        ys[i] = rec.label
    return xs, ys


def train_arrays(
    config: ModelConfig, hyper: Hyper, x: np.ndarray, y: np.ndarray
) -> tuple[Model, list[float]]:
    """SGD with momentum over pre-encoded samples; returns epoch loss history."""
    if len(np.unique(y)) < 2:
        raise ValueError("training requires samples of both classes")
    model = build_model(config)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    history = []
    n = x.shape[0]
    for epoch in range(hyper.epochs):
        rng = np.random.default_rng(np.random.SeedSequence((hyper.seed, epoch)))
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            loss, grads = loss_and_gradients(model, x[idx], y[idx], hyper.weight_decay)
            for p, v, g in zip(params, velocity, grads):
                v *= hyper.momentum
                v -= hyper.learning_rate * g
                p += v
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
    return model, history


def train(
    config: ModelConfig, hyper: Hyper, samples: list[SampleRecord]
) -> tuple[Model, list[float]]:
    """Train from a manifest subset (records must reference readable rasters)."""
    x, y = encode_samples(samples, config.input_side)
    return train_arrays(config, hyper, x, y)


def predict_batch(model: Model, encoded: np.ndarray) -> np.ndarray:
    """Deformation probability per encoded patch."""
    return forward(model, encoded)[:, 0]


def infer_input_side(model: Model, patch_size: int | None = None) -> int:
    """Recover the encoder side from layer shapes (MNV1 stores no input size).

    Pooling floors can make two adjacent sides produce identical flatten
    widths; the patch size (which the side must divide) disambiguates.
    """
    specs = []
    for layer in model.layers:
        if isinstance(layer, Conv):
            specs.append(("conv", layer.w.shape[0], layer.w.shape[2], layer.w.shape[1]))
        elif isinstance(layer, MaxPool):
            specs.append(("maxpool", layer.size))
        elif isinstance(layer, Dense):
            specs.append(("dense", layer.w.shape[0], layer.w.shape[1]))

    first_dense_in = None
    for s in specs:
        if s[0] == "dense":
            first_dense_in = s[2]
            break
    if first_dense_in is None:
        raise ValueError("model has no dense layer; cannot infer input side")

    candidates = []
    for side in range(2, 1025):
        c, h = model.channels_in, side
        ok = True
        for s in specs:
            if s[0] == "conv":
                if s[3] != c or h < s[2]:
                    ok = False
                    break
                c, h = s[1], h - s[2] + 1
            elif s[0] == "maxpool":
                h = h // s[1]
                if h == 0:
                    ok = False
                    break
            elif s[0] == "dense":
                break
        if ok and c * h * h == first_dense_in:
            candidates.append(side)
    if not candidates:
        raise ValueError("no input side consistent with the layer shapes")
    if patch_size is not None:
        dividing = [s for s in candidates if patch_size % s == 0]
        if dividing:
            return dividing[0]
    return candidates[0]


def predict_patch(model: Model, values: np.ndarray, input_side: int | None = None) -> float:
    """Deformation probability of one raw phase patch."""
    side = input_side or model.input_side or infer_input_side(model, values.shape[0])
    enc = encode_patch(values, side)[None, ...]
    return float(forward(model, enc)[0, 0])


# ---------------------------------------------------------------------------
# MNV1 container
# ---------------------------------------------------------------------------

_MAGIC = b"MNV1"
_VERSION = 1


def _layer_record(layer) -> tuple[int, list[int], list[np.ndarray]]:
    if isinstance(layer, Conv):
        return TAG_CONV, list(layer.w.shape), [layer.w, layer.b]
    if isinstance(layer, ReLU):
        return TAG_RELU, [], []
    if isinstance(layer, MaxPool):
        return TAG_MAXPOOL, [layer.size], []
    if isinstance(layer, Flatten):
        return TAG_FLATTEN, [], []
    if isinstance(layer, Dense):
        return TAG_DENSE, list(layer.w.shape), [layer.w, layer.b]
    if isinstance(layer, Softmax):
        return TAG_SOFTMAX, [], []
    raise ValueError(f"unsupported layer {type(layer).__name__}")


def _serialize_records(records) -> bytes:
    out = bytearray()
    out += struct.pack("<4sII", _MAGIC, _VERSION, len(records))
    for tag, extents, arrays in records:
        out += struct.pack("<BI", tag, len(extents))
        for e in extents:
            out += struct.pack("<I", e)
        for arr in arrays:
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    checksum = sum(out) % (1 << 64)
    out += struct.pack("<Q", checksum)
    return bytes(out)


def save_model(model, path) -> None:
    """Write a Model (or SvmModel via its own record) to an MNV1 file."""
    if hasattr(model, "mnv1_record"):
        records = [model.mnv1_record()]
    else:
        records = [_layer_record(layer) for layer in model.layers]
    with open(path, "wb") as f:
        f.write(_serialize_records(records))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise ModelFormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_model(path):
    """Load an MNV1 file; returns a Model or an SvmModel (tag 7 payload)."""
    from .svm import SvmModel

    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20:
        raise ModelFormatError(f"{path}: file too short for MNV1 header")
    body, (checksum,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if sum(body) % (1 << 64) != checksum:
        raise ModelFormatError(f"{path}: checksum mismatch, file corrupted")
    rd = _Reader(body, path)
    magic, version, layer_count = struct.unpack("<4sII", rd.take(12, "header"))
    if magic != _MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")

    layers = []
    svm_payload = None
    for i in range(layer_count):
        tag, rank = struct.unpack("<BI", rd.take(5, f"layer {i} tag"))
        if rank > 8:
            raise ModelFormatError(f"{path}: layer {i} rank {rank} is implausible")
        extents = [
            struct.unpack("<I", rd.take(4, f"layer {i} extent"))[0] for _ in range(rank)
        ]
        if tag == TAG_CONV:
            if rank != 4:
                raise ModelFormatError(f"{path}: conv layer {i} must have rank 4, got {rank}")
            count = int(np.prod(extents)) + extents[0]
            data = np.frombuffer(rd.take(count * 4, f"conv layer {i} payload"), dtype="<f4")
            w = data[: -extents[0]].reshape(extents).astype(np.float32)
            b = data[-extents[0] :].astype(np.float32)
            layers.append(Conv(w, b))
        elif tag == TAG_DENSE:
            if rank != 2:
                raise ModelFormatError(f"{path}: dense layer {i} must have rank 2, got {rank}")
            count = extents[0] * extents[1] + extents[0]
            data = np.frombuffer(rd.take(count * 4, f"dense layer {i} payload"), dtype="<f4")
            w = data[: -extents[0]].reshape(extents).astype(np.float32)
            b = data[-extents[0] :].astype(np.float32)
            layers.append(Dense(w, b))
        elif tag == TAG_MAXPOOL:
            if rank != 1:
                raise ModelFormatError(f"{path}: maxpool layer {i} must have rank 1")
            layers.append(MaxPool(extents[0]))
        elif tag == TAG_RELU:
            layers.append(ReLU())
        elif tag == TAG_FLATTEN:
            layers.append(Flatten())
        elif tag == TAG_SOFTMAX:
            layers.append(Softmax())
        elif tag == TAG_SVM:
            if rank != 1:
                raise ModelFormatError(f"{path}: svm record must have rank 1")
            dim = extents[0]
            count = 3 * dim + 1
            data = np.frombuffer(rd.take(count * 4, "svm payload"), dtype="<f4")
            svm_payload = (dim, data)
        else:
            raise ModelFormatError(f"{path}: unknown layer tag {tag}")
    if rd.pos != len(body):
        raise ModelFormatError(
            f"{path}: payload length mismatch, {len(body) - rd.pos} trailing bytes"
        )

    if svm_payload is not None:
        if layer_count != 1:
            raise ModelFormatError(f"{path}: svm container must hold exactly one record")
        dim, data = svm_payload
        return SvmModel(
            w=data[:dim].astype(np.float64),
            mean=data[dim : 2 * dim].astype(np.float64),
            std=data[2 * dim : 3 * dim].astype(np.float64),
            b=float(data[3 * dim]),
        )

    if not layers:
        raise ModelFormatError(f"{path}: no layers")
    channels_in = layers[0].w.shape[1] if isinstance(layers[0], Conv) else 2
    # input_side is not part of the container; predict_patch infers it
    # patch-size-aware when needed
    return Model(layers=layers, channels_in=channels_in, input_side=None)
