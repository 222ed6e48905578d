"""Minimal dense-tensor neural net primitives.

Tensors are plain numpy arrays in NCHW layout (a single sample may be
passed as CHW and is promoted).  Only the fixed layer menu the cascade
needs is provided: valid-padding conv, max pooling, fully-connected,
relu, softmax, the two losses, and momentum SGD.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import backend

EPS_LOG = 1e-7


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers


@dataclass
class Conv:
    """Valid-padding square convolution, weights (out_ch, in_ch, k, k)."""

    kind = "conv"
    k: int
    s: int
    w: np.ndarray
    b: np.ndarray
    gw: np.ndarray = field(default=None, repr=False)
    gb: np.ndarray = field(default=None, repr=False)
    vw: np.ndarray = field(default=None, repr=False)
    vb: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.gw is None:
            self.gw = np.zeros_like(self.w)
            self.gb = np.zeros_like(self.b)
            self.vw = np.zeros_like(self.w)
            self.vb = np.zeros_like(self.b)


@dataclass
class Pool:
    kind = "maxpool"
    k: int
    s: int


@dataclass
class FC:
    """Inner product layer, weights (n_out, n_in)."""

    kind = "fc"
    w: np.ndarray
    b: np.ndarray
    gw: np.ndarray = field(default=None, repr=False)
    gb: np.ndarray = field(default=None, repr=False)
    vw: np.ndarray = field(default=None, repr=False)
    vb: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.gw is None:
            self.gw = np.zeros_like(self.w)
            self.gb = np.zeros_like(self.b)
            self.vw = np.zeros_like(self.w)
            self.vb = np.zeros_like(self.b)


@dataclass
class Relu:
    kind = "relu"


def make_conv(in_ch: int, out_ch: int, k: int, s: int, dtype=np.float32) -> Conv:
    return Conv(k=k, s=s, w=np.zeros((out_ch, in_ch, k, k), dtype=dtype),
                b=np.zeros(out_ch, dtype=dtype))


def make_fc(n_in: int, n_out: int, dtype=np.float32) -> FC:
    return FC(w=np.zeros((n_out, n_in), dtype=dtype), b=np.zeros(n_out, dtype=dtype))


def param_layers(layers):
    return [l for l in layers if isinstance(l, (Conv, FC))]


# ---------------------------------------------------------------------------
# forward / backward ops


def _promote(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError("shape: expected CHW or NCHW input")
    return x, False


def conv2d(x: np.ndarray, layer: Conv) -> np.ndarray:
    xb, single = _promote(x)
    if xb.shape[1] != layer.w.shape[1]:
        raise ShapeError("shape: input channels do not match conv weights")
    if xb.shape[2] < layer.k or xb.shape[3] < layer.k:
        raise ShapeError("shape: input smaller than kernel")
    y = backend.conv2d_forward(np.ascontiguousarray(xb), layer.w, layer.b, layer.s)
    return y[0] if single else y


def conv2d_backward(x: np.ndarray, layer: Conv, gout: np.ndarray) -> np.ndarray:
    xb, single = _promote(x)
    gb4, _ = _promote(gout)
    expect = (xb.shape[0], layer.w.shape[0],
              (xb.shape[2] - layer.k) // layer.s + 1,
              (xb.shape[3] - layer.k) // layer.s + 1)
    if gb4.shape != expect:
        raise ShapeError("shape: grad_out does not match conv output")
    gin, gw, gbias = backend.conv2d_backward(
        np.ascontiguousarray(xb), layer.w, layer.s, np.ascontiguousarray(gb4))
    layer.gw += gw
    layer.gb += gbias
    return gin[0] if single else gin


def maxpool(x: np.ndarray, k: int, s: int):
    xb, single = _promote(x)
    y, idx = backend.maxpool_forward(np.ascontiguousarray(xb), k, s)
    if single:
        return y[0], idx[0]
    return y, idx


def maxpool_backward(gout: np.ndarray, idx: np.ndarray, x_shape, k: int, s: int):
    gb4, single = _promote(gout)
    if idx.ndim == 3:
        idx = idx[None]
    shape = (1, *x_shape) if len(x_shape) == 3 else tuple(x_shape)
    gin = backend.maxpool_backward(np.ascontiguousarray(gb4), idx, shape, k, s)
    return gin[0] if single else gin


def fc(x: np.ndarray, layer: FC) -> np.ndarray:
    flat = x.reshape(1, -1) if x.ndim == 1 else x.reshape(x.shape[0], -1)
    if flat.shape[1] != layer.w.shape[1]:
        raise ShapeError("shape: fc input size does not match weights")
    y = flat @ layer.w.T + layer.b
    return y[0] if x.ndim == 1 else y


def fc_backward(x: np.ndarray, layer: FC, gout: np.ndarray) -> np.ndarray:
    flat = x.reshape(1, -1) if x.ndim == 1 else x.reshape(x.shape[0], -1)
    g2 = gout.reshape(1, -1) if gout.ndim == 1 else gout
    layer.gw += g2.T @ flat
    layer.gb += g2.sum(axis=0)
    gin = g2 @ layer.w
    return gin.reshape(x.shape)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return np.where(x > 0, gout, 0)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(prob, y):
    """Binary cross-entropy on the positive-class softmax output.

    Returns (loss, grad) where grad is w.r.t. the pair of logits that
    produced ``prob`` via a 2-way softmax (grad = softmax - onehot).
    Works element-wise on arrays; loss is per-element.
    """
    prob = np.clip(np.asarray(prob, dtype=np.float64), EPS_LOG, 1.0 - EPS_LOG)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob))
    grad = np.stack([y - prob, prob - y], axis=-1)  # d/d(z0, z1)
    return loss, grad


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """K-way softmax cross entropy; returns (per-sample loss, grad wrt logits)."""
    p = softmax(logits)
    n = p.shape[0]
    pc = np.clip(p[np.arange(n), labels], EPS_LOG, 1.0)
    loss = -np.log(pc)
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad


def smooth_l1(pred: np.ndarray, target: np.ndarray):
    """Elementwise smooth-L1, summed over the last axis; grad w.r.t. pred."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError("shape: smooth_l1 operands differ")
    d = pred - target
    a = np.abs(d)
    loss = np.where(a < 1.0, 0.5 * d * d, a - 0.5).sum(axis=-1)
    grad = np.where(a < 1.0, d, np.sign(d))
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer / init


@dataclass
class OptimState:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iteration: int = 0
    lr_drop_iter: int = 7000
    max_iter: int = 10000

    def current_lr(self) -> float:
        return self.lr * 0.1 if self.iteration >= self.lr_drop_iter else self.lr


def sgd_step(layers, optim: OptimState) -> None:
    """v <- m*v - lr*(g + wd*w); w <- w + v; then clears gradients."""
    lr = optim.current_lr()
    for l in param_layers(layers):
        for w, g, v in ((l.w, l.gw, l.vw), (l.b, l.gb, l.vb)):
            v *= optim.momentum
            v -= lr * (g + optim.weight_decay * w)
            w += v
            g[...] = 0


def gaussian_init(layers, std: float = 0.01, seed: int = 0) -> None:
    """Zero-mean Gaussian weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    for l in param_layers(layers):
        l.w[...] = (std * rng.standard_normal(l.w.shape)).astype(l.w.dtype)
        l.b[...] = 0
        l.gw[...] = 0
        l.gb[...] = 0
        l.vw[...] = 0
        l.vb[...] = 0


def scaled_init(layers, seed: int = 0) -> None:
    """Fan-in-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases.

    A fixed small std starves deep trunks of signal: activations shrink
    by roughly std*sqrt(fan_in) per layer, leaving the heads with
    near-constant features that gradient descent cannot recover from at
    small scale.  Scaling by fan-in keeps activation variance stable.
    """
    rng = np.random.default_rng(seed)
    for l in param_layers(layers):
        std = np.sqrt(2.0 / l.w[0].size)
        l.w[...] = (std * rng.standard_normal(l.w.shape)).astype(l.w.dtype)
        l.b[...] = 0
        l.gw[...] = 0
        l.gb[...] = 0
        l.vw[...] = 0
        l.vb[...] = 0


# ---------------------------------------------------------------------------
# model file format

MAGIC = b"PCNW"
FORMAT_VERSION = 1

_KIND_TAGS = {"conv": 1, "maxpool": 2, "fc": 3, "relu": 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def _write_array(fh, a: np.ndarray) -> None:
    fh.write(struct.pack("<I", a.ndim))
    fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
    fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_array(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    n = int(np.prod(shape))
    data = np.frombuffer(fh.read(4 * n), dtype="<f4")
    if data.size != n:
        raise ModelFormatError("truncated model file")
    return data.reshape(shape).astype(np.float32)


def write_records(fh, records) -> None:
    """records: iterable of (role, layer); role 0=trunk, 1..=head tags."""
    records = list(records)
    fh.write(struct.pack("<I", len(records)))
    for role, layer in records:
        kind = _KIND_TAGS[layer.kind]
        k = getattr(layer, "k", 0)
        s = getattr(layer, "s", 0)
        fh.write(struct.pack("<IIII", kind, role, k, s))
        if isinstance(layer, (Conv, FC)):
            _write_array(fh, layer.w)
            _write_array(fh, layer.b)


def read_records(fh):
    (n,) = struct.unpack("<I", fh.read(4))
    out = []
    for _ in range(n):
        kind_tag, role, k, s = struct.unpack("<IIII", fh.read(16))
        if kind_tag not in _TAG_KINDS:
            raise ModelFormatError(f"unknown layer kind tag {kind_tag}")
        kind = _TAG_KINDS[kind_tag]
        if kind == "conv":
            w = _read_array(fh)
            b = _read_array(fh)
            out.append((role, Conv(k=k, s=s, w=w, b=b)))
        elif kind == "fc":
            w = _read_array(fh)
            b = _read_array(fh)
            out.append((role, FC(w=w, b=b)))
        elif kind == "maxpool":
            out.append((role, Pool(k=k, s=s)))
        else:
            out.append((role, Relu()))
    return out
