"""A small fully-convolutional classifier stack with exact gradients.

Networks are conv layers (optional ReLU), a 1x1 conv producing one map per
class, and a global pool that turns each class map into a logit.  Activations
are kept channels-last internally so each conv is a single matrix product.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from . import __version__
from .convops import (Boundary, ConvSpec, PadMode, backward_nhwc, forward_nhwc,
                      weight_from_matrix, weight_matrix)
from .errors import (ConfigError, CorruptFileError, ShapeError, TrainingDivergedError,
                     VersionError)
from .tensor import Rng, read_bt, uniform_init, write_bt

log = logging.getLogger(__name__)


# -- architecture description -----------------------------------------------

@dataclass(frozen=True)
class Conv:
    conv: ConvSpec
    c_in: int
    c_out: int
    relu: bool = True


@dataclass(frozen=True)
class Logits1x1:
    c_in: int
    num_classes: int


@dataclass(frozen=True)
class GlobalMaxPool:
    pass


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


Layer = Union[Conv, Logits1x1, GlobalMaxPool, GlobalAvgPool]

_LOGITS_SPEC = ConvSpec(Boundary.SAME, PadMode.ZERO, 0, 0, 1, 1)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        pools = [i for i, l in enumerate(layers) if isinstance(l, (GlobalMaxPool, GlobalAvgPool))]
        if len(pools) != 1 or pools[0] != len(layers) - 1:
            raise ConfigError("a network needs exactly one global pool, as its last layer")
        if len(layers) < 2 or not isinstance(layers[-2], Logits1x1):
            raise ConfigError("Logits1x1 must sit immediately before the global pool")
        if any(isinstance(l, Logits1x1) for l in layers[:-2]):
            raise ConfigError("only one Logits1x1 layer is allowed")
        c = None
        for l in layers[:-1]:
            if c is not None and l.c_in != c:
                raise ConfigError(f"channel mismatch: {l.c_in} follows {c}")
            c = l.c_out if isinstance(l, Conv) else l.num_classes

    @property
    def num_classes(self) -> int:
        return self.layers[-2].num_classes

    @property
    def in_channels(self) -> int:
        return self.layers[0].c_in

    def conv_layers(self):
        """``(ConvSpec, c_in, c_out, relu)`` for every parameterised layer."""
        out = []
        for l in self.layers:
            if isinstance(l, Conv):
                out.append((l.conv, l.c_in, l.c_out, l.relu))
            elif isinstance(l, Logits1x1):
                out.append((_LOGITS_SPEC, l.c_in, l.num_classes, False))
        return out

    def total_stride(self):
        sh = sw = 1
        for c, *_ in self.conv_layers():
            sh *= c.stride_h
            sw *= c.stride_w
        return sh, sw

    def to_dict(self) -> dict:
        items = []
        for l in self.layers:
            if isinstance(l, Conv):
                items.append({"type": "conv", "conv": l.conv.to_dict(), "c_in": l.c_in,
                              "c_out": l.c_out, "relu": l.relu})
            elif isinstance(l, Logits1x1):
                items.append({"type": "logits1x1", "c_in": l.c_in, "num_classes": l.num_classes})
            elif isinstance(l, GlobalMaxPool):
                items.append({"type": "global_max_pool"})
            else:
                items.append({"type": "global_avg_pool"})
        return {"layers": items}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for item in d["layers"]:
            t = item["type"]
            if t == "conv":
                layers.append(Conv(ConvSpec.from_dict(item["conv"]), item["c_in"], item["c_out"],
                                   item.get("relu", True)))
            elif t == "logits1x1":
                layers.append(Logits1x1(item["c_in"], item["num_classes"]))
            elif t == "global_max_pool":
                layers.append(GlobalMaxPool())
            elif t == "global_avg_pool":
                layers.append(GlobalAvgPool())
            else:
                raise ConfigError(f"unknown layer type {t!r}")
        return cls(tuple(layers))


def quadrant_net(boundary="same", pad_mode="zero", in_channels=3, k=2) -> NetworkSpec:
    """One 5x5 kernel, ReLU, a 1x1 head to two class maps, global max pool."""
    conv = ConvSpec.square(boundary, pad_mode, k, 1)
    return NetworkSpec((Conv(conv, in_channels, 1, True), Logits1x1(1, 2), GlobalMaxPool()))


def redgreen_net(boundary="same", pad_mode="zero", in_channels=3, ks=(1, 1, 1, 1),
                 widths=(32, 32, 64, 64), strides=(1, 2, 2, 2)) -> NetworkSpec:
    """Four convs (strides 1, 2, 2, 2; half-widths ``ks``), a 1x1 head, global max pool."""
    layers, c = [], in_channels
    for w, s, k in zip(widths, strides, ks):
        layers.append(Conv(ConvSpec.square(boundary, pad_mode, k, s), c, w, True))
        c = w
    layers += [Logits1x1(c, 2), GlobalMaxPool()]
    return NetworkSpec(tuple(layers))


ARCHITECTURES = {"quadrant": quadrant_net, "redgreen": redgreen_net}


# -- model ------------------------------------------------------------------

@dataclass
class Model:
    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    seed: int = 0

    @classmethod
    def init(cls, spec: NetworkSpec, seed: int) -> "Model":
        """Uniform ``+-sqrt(6 / fan_in)`` weights, zero biases."""
        rng = Rng(seed, stream=0x1217)
        weights, biases = [], []
        for conv, c_in, c_out, _ in spec.conv_layers():
            kh, kw = conv.kernel_hw
            bound = math.sqrt(6.0 / (c_in * kh * kw))
            weights.append(uniform_init(rng, (c_out, c_in, kh, kw), -bound, bound))
            biases.append(np.zeros(c_out))
        return cls(spec, weights, biases, seed)

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Model":
        return Model(self.spec, [w.copy() for w in self.weights],
                     [b.copy() for b in self.biases], self.seed)


@dataclass
class ForwardCache:
    inputs: list
    cols: list
    pre: list
    pool_shape: tuple
    argmax: Optional[np.ndarray]
    n_params: int


def forward(model: Model, x: np.ndarray, keep_cache: bool = True):
    """Return ``(logits (N, classes), cache)``.  ``x`` is ``(N, C, H, W)``."""
    if x.ndim != 4 or x.shape[1] != model.spec.in_channels:
        raise ShapeError(f"input shape {x.shape} does not fit {model.spec.in_channels} channels")
    h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=np.float64)
    inputs, cols, pre = [], [], []
    for (conv, _, _, relu), w, b in zip(model.spec.conv_layers(), model.weights, model.biases):
        y, c = forward_nhwc(h, weight_matrix(w), b, conv)
        if keep_cache:
            inputs.append(h.shape)
            cols.append(c)
        if relu:
            if keep_cache:
                pre.append(y > 0)
            y = np.maximum(y, 0.0)
        elif keep_cache:
            pre.append(None)
        h = y
    N, Ho, Wo, K = h.shape
    flat = h.reshape(N, Ho * Wo, K)
    pool = model.spec.layers[-1]
    argmax = None
    if isinstance(pool, GlobalMaxPool):
        argmax = flat.argmax(axis=1)  # first maximum in row-major order
        logits = np.take_along_axis(flat, argmax[:, None, :], axis=1)[:, 0, :]
    else:
        logits = flat.mean(axis=1)
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergedError("non-finite logits")
    cache = ForwardCache(inputs, cols, pre, h.shape, argmax, len(model.weights)) if keep_cache else None
    return logits, cache


def predict(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    for i in range(0, x.shape[0], batch_size):
        logits, _ = forward(model, x[i:i + batch_size], keep_cache=False)
        out.append(logits)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.spec.num_classes))


def backward(model: Model, cache: ForwardCache, grad_logits: np.ndarray, need_input: bool = False):
    """Exact reverse pass.

    Returns ``(grad_weights, grad_biases, grad_x)``; ``grad_x`` is NCHW, or
    None unless ``need_input``.
    """
    if cache is None or cache.n_params != len(model.weights):
        raise ShapeError("forward cache does not belong to this model")
    N, Ho, Wo, K = cache.pool_shape
    if grad_logits.shape != (N, K):
        raise ShapeError(f"grad_logits shape {grad_logits.shape} != {(N, K)}")
    g = np.zeros((N, Ho * Wo, K))
    if cache.argmax is not None:
        np.put_along_axis(g, cache.argmax[:, None, :], grad_logits[:, None, :], axis=1)
    else:
        g += grad_logits[:, None, :] / (Ho * Wo)
    g = g.reshape(N, Ho, Wo, K)
    layers = model.spec.conv_layers()
    gw = [None] * len(layers)
    gb = [None] * len(layers)
    for i in reversed(range(len(layers))):
        conv = layers[i][0]
        if cache.pre[i] is not None:
            g = g * cache.pre[i]
        need_x = i > 0 or need_input
        g, gwm, gb[i] = backward_nhwc(g, cache.cols[i], weight_matrix(model.weights[i]),
                                      cache.inputs[i], conv, need_x=need_x)
        gw[i] = weight_from_matrix(gwm, model.weights[i].shape)
    grad_x = np.ascontiguousarray(g.transpose(0, 3, 1, 2)) if need_input else None
    return gw, gb, grad_x


def loss_softmax_ce(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient ``(softmax - onehot) / N``."""
    labels = np.asarray(labels, dtype=np.int64)
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeError(f"labels shape {labels.shape} != ({N},)")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ConfigError(f"labels must lie in [0, {K})")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(N), labels]))
    grad = np.exp(z - lse[:, None])
    grad[np.arange(N), labels] -= 1.0
    return loss, grad / N


def accuracy(model: Model, x: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = predict(model, x).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


# -- training ---------------------------------------------------------------

@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


def train(model: Model, images: np.ndarray, labels: np.ndarray, cfg: SgdConfig,
          val_images: Optional[np.ndarray] = None, val_labels: Optional[np.ndarray] = None):
    """SGD with momentum; returns ``(best_model, epoch_log)``.

    The returned parameters are those of the epoch with the highest validation
    accuracy (earliest on ties; the initial model counts as epoch 0).  Without
    a validation set the final parameters are returned.  A learning rate of
    zero is accepted and leaves the parameters untouched.
    """
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise ConfigError("cannot train on an empty dataset")
    model = model.copy()
    rng = Rng(cfg.seed, stream=0x5EED)
    velocity = [np.zeros_like(p) for p in model.params()]
    has_val = val_images is not None and len(val_labels)
    best = model.copy()
    best_val = accuracy(model, val_images, val_labels) if has_val else -1.0
    history = []
    n = images.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        tot_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = forward(model, images[idx])
            loss, grad = loss_softmax_ce(logits, labels[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}")
            tot_loss += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == labels[idx]))
            gw, gb, _ = backward(model, cache, grad)
            grads = []
            for a, b in zip(gw, gb):
                grads += [a, b]
            for p, v, g in zip(model.params(), velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
        val_acc = accuracy(model, val_images, val_labels) if has_val else float("nan")
        rec = EpochRecord(epoch, tot_loss / n, correct / n, val_acc)
        history.append(rec)
        log.debug("epoch %d loss %.4f train %.4f val %.4f", epoch, rec.train_loss,
                  rec.train_acc, rec.val_acc)
        if has_val and val_acc > best_val:
            best_val = val_acc
            best = model.copy()
    if not has_val:
        best = model
    return best, history


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_acc\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss!r},{r.train_acc!r},{r.val_acc!r}\n")


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"BCKP"
CKPT_VERSION = 1


def save_model(model: Model, path) -> None:
    """Magic, version byte, u64 header length, JSON header, then one ``.bt``
    block per weight tensor and per bias (as ``(1, 1, 1, C_out)``)."""
    header = json.dumps({"spec": model.spec.to_dict(), "seed": model.seed,
                         "version": CKPT_VERSION, "package_version": __version__},
                        sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<BQ", CKPT_VERSION, len(header)))
    buf.write(header)
    for w, b in zip(model.weights, model.biases):
        write_bt(w, buf)
        write_bt(b.reshape(1, 1, 1, -1), buf)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    if len(data) < 13 or data[:4] != CKPT_MAGIC:
        raise CorruptFileError(f"{path} is not a model checkpoint")
    version, hlen = struct.unpack("<BQ", data[4:13])
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    if len(data) < 13 + hlen:
        raise CorruptFileError("truncated checkpoint header")
    try:
        header = json.loads(data[13:13 + hlen])
    except ValueError as exc:
        raise CorruptFileError(f"unreadable checkpoint header: {exc}") from exc
    spec = NetworkSpec.from_dict(header["spec"])
    fh = io.BytesIO(data[13 + hlen:])
    weights, biases = [], []
    for conv, c_in, c_out, _ in spec.conv_layers():
        w = read_bt(fh)
        b = read_bt(fh)
        kh, kw = conv.kernel_hw
        if w.shape != (c_out, c_in, kh, kw) or b.size != c_out:
            raise CorruptFileError("checkpoint tensors do not match the stored spec")
        weights.append(w)
        biases.append(b.reshape(-1))
    if fh.read(1):
        raise CorruptFileError("trailing bytes in checkpoint")
    return Model(spec, weights, biases, header.get("seed", 0))
