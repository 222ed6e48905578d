"""Pure-numpy convolution and pooling kernels.

Fallback backend used when the compiled extension is unavailable
(or when ROTDET_PURE is set).  Same interface as ``_kernels_cy``:
batched NCHW tensors, valid padding, square kernels.
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"


def _out_side(side: int, k: int, s: int) -> int:
    return (side - k) // s + 1


def _im2col(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(N,C,H,W) -> (N*OH*OW, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    oh, ow = _out_side(h, k, s), _out_side(w, k, s)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]  # (N, C, OH, OW, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * oh * ow, c * k * k
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, s: int) -> np.ndarray:
    n, c, h, wd = x.shape
    oc = w.shape[0]
    k = w.shape[2]
    oh, ow = _out_side(h, k, s), _out_side(wd, k, s)
    cols = _im2col(x, k, s)
    y = cols @ w.reshape(oc, -1).T
    y += b
    return np.ascontiguousarray(y.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, s, gout):
    """Returns (grad_input, grad_weight, grad_bias)."""
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    _, _, oh, ow = gout.shape
    g2 = np.ascontiguousarray(gout.transpose(0, 2, 3, 1)).reshape(-1, oc)
    cols = _im2col(x, k, s)
    gw = (g2.T @ cols).reshape(w.shape)
    gb = g2.sum(axis=0)

    # grad wrt input: correlate the stride-dilated, k-1 padded output grad
    # with the spatially flipped kernel (transposed convolution).
    dh = (oh - 1) * s + 1
    dw = (ow - 1) * s + 1
    gd = np.zeros((n, oc, dh + 2 * (k - 1), dw + 2 * (k - 1)), dtype=gout.dtype)
    gd[:, :, k - 1 : k - 1 + dh : s, k - 1 : k - 1 + dw : s] = gout
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gin_core = conv2d_forward(gd, wflip, np.zeros(c, dtype=gout.dtype), 1)
    if gin_core.shape[2] == h and gin_core.shape[3] == wd:
        gin = gin_core
    else:  # input rows/cols never touched by any window get zero grad
        gin = np.zeros_like(x)
        gin[:, :, : gin_core.shape[2], : gin_core.shape[3]] = gin_core
    return gin, gw, gb


def maxpool_forward(x: np.ndarray, k: int, s: int):
    """Returns (pooled, argmax) with argmax the within-window flat index.

    Ties resolve to the smallest index (numpy argmax picks the first max).
    """
    n, c, h, w = x.shape
    oh, ow = _out_side(h, k, s), _out_side(w, k, s)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s].reshape(n, c, oh, ow, k * k)
    idx = win.argmax(axis=-1).astype(np.int32)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool_backward(gout, idx, x_shape, k: int, s: int):
    n, c, h, w = x_shape
    _, _, oh, ow = gout.shape
    gin = np.zeros((n, c, h * w), dtype=gout.dtype)
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    base = (oy * s)[None, None] * w + (ox * s)[None, None]
    off = (idx // k) * w + (idx % k)
    flat = base + off  # (N,C,OH,OW) flat positions into H*W
    np.add.at(
        gin,
        (
            np.arange(n)[:, None, None, None],
            np.arange(c)[None, :, None, None],
            flat,
        ),
        gout,
    )
    return gin.reshape(x_shape)
