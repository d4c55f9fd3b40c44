"""Naive reference kernels.

Deliberately slow, loop-level implementations of the convolution and
linear ops, kept as an independent cross-check for the vectorised
kernels in :mod:`mnv2bench.tensor`.  These spell the arithmetic out
per output element and share no dispatch logic with the fast paths, so
a bug in the strided/im2col code cannot hide in both.

Only use these on small shapes; they are O(n*cout*oh*ow) Python loops.
"""

from __future__ import annotations

import numpy as np

from .tensor import conv_output_size

__all__ = ["conv2d_naive", "linear_naive", "batchnorm_naive"]


def conv2d_naive(x, w, bias=None, *, stride: int = 1, padding: int = 0,
                 groups: int = 1):
    """Direct convolution, one output element at a time."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    n, cin, h, win = x.shape
    cout, cing, kh, kw = w.shape
    coutg = cout // groups
    hout = conv_output_size(h, kh, stride, padding)
    wout = conv_output_size(win, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, hout, wout), dtype=np.float32)
    for b in range(n):
        for co in range(cout):
            g = co // coutg
            c0 = g * cing
            wf = w[co]
            for oh in range(hout):
                for ow in range(wout):
                    patch = xp[b, c0 : c0 + cing,
                               oh * stride : oh * stride + kh,
                               ow * stride : ow * stride + kw]
                    out[b, co, oh, ow] = np.float32((patch * wf).sum())
    if bias is not None:
        out += np.asarray(bias, dtype=np.float32).reshape(1, cout, 1, 1)
    return out


def linear_naive(x, w, b):
    """Affine map as an explicit triple loop."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    n, din = x.shape
    dout = w.shape[0]
    out = np.zeros((n, dout), dtype=np.float32)
    for i in range(n):
        for o in range(dout):
            acc = np.float32(0)
            for j in range(din):
                acc += x[i, j] * w[o, j]
            out[i, o] = acc + b[o]
    return out


def batchnorm_naive(x, gamma, beta, mean, var, eps):
    """Inference batch-norm applied per channel, unfused."""
    x = np.asarray(x, dtype=np.float32)
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        scale = gamma[c] / np.sqrt(var[c] + eps)
        out[:, c] = (x[:, c] - mean[c]) * scale + beta[c]
    return out
