"""Dense NCHW tensor kernels.

All activations and weights are carried as plain ``numpy.ndarray`` in
single precision, laid out (n, c, h, w) row-major.  The kernels here are
the building blocks the network is assembled from: convolution (direct
grouped / depthwise / pointwise), ReLU6, global average pooling, the
linear classifier layer, softmax cross-entropy with its gradient, and
inference-time batch-norm folding.

Kernels are pure functions; they never mutate their inputs and are safe
to call concurrently.  Non-finite values (NaN/Inf) are treated as a
contract violation and raised as :class:`NonFiniteError` instead of
being propagated silently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteError",
    "conv_output_size",
    "conv2d",
    "relu6",
    "global_avg_pool",
    "linear",
    "softmax",
    "softmax_xent",
    "fold_batchnorm",
]


class NonFiniteError(FloatingPointError):
    """A kernel produced or received NaN/Inf values."""


def _as_f32(x, name, ndim=None):
    a = np.asarray(x, dtype=np.float32)
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {a.shape}")
    return a


def _check_finite(a, what):
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{what} contains non-finite values")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output extent: floor((size + 2*padding - kernel)/stride) + 1."""
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, w, bias=None, *, stride: int = 1, padding: int = 0, groups: int = 1):
    """2-D convolution over an NCHW batch.

    ``w`` has shape (cout, cin/groups, kh, kw).  ``groups == cin`` with a
    single filter per channel is a depthwise convolution; a 1x1 kernel is
    a pointwise convolution.  Padding is symmetric zero-padding.
    """
    x = _as_f32(x, "input", 4)
    w = _as_f32(w, "weight", 4)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    if groups < 1:
        raise ValueError(f"groups must be positive, got {groups}")

    n, cin, h, win = x.shape
    cout, cing, kh, kw = w.shape
    if cin % groups != 0 or cout % groups != 0:
        raise ValueError(
            f"groups={groups} must divide both cin={cin} and cout={cout}"
        )
    if cing != cin // groups:
        raise ValueError(
            f"weight expects {cing * groups} input channels, input has {cin}"
        )
    hout = conv_output_size(h, kh, stride, padding)
    wout = conv_output_size(win, kw, stride, padding)
    if hout < 1 or wout < 1:
        raise ValueError(
            f"kernel {kh}x{kw} stride {stride} pad {padding} does not fit "
            f"input {h}x{win}"
        )
    if bias is not None:
        bias = _as_f32(bias, "bias", 1)
        if bias.shape[0] != cout:
            raise ValueError(f"bias length {bias.shape[0]} != cout {cout}")

    if kh == 1 and kw == 1 and stride == 1 and padding == 0 and groups == 1:
        out = _conv_pointwise(x, w)
    elif groups == cin and cout == cin and cing == 1:
        out = _conv_depthwise(x, w, stride, padding, hout, wout)
    else:
        out = _conv_im2col(x, w, stride, padding, groups, hout, wout)

    if bias is not None:
        out += bias.reshape(1, cout, 1, 1)
    _check_finite(out, "conv2d output")
    return out


def _conv_pointwise(x, w):
    n, cin, h, win = x.shape
    cout = w.shape[0]
    out = np.matmul(w.reshape(cout, cin), x.reshape(n, cin, h * win))
    return out.reshape(n, cout, h, win)


def _conv_depthwise(x, w, stride, padding, hout, wout):
    n, c = x.shape[:2]
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c, hout, wout), dtype=np.float32)
    # Sum of kh*kw shifted, per-channel scaled slices; no patch copies.
    for i in range(kh):
        for j in range(kw):
            patch = xp[
                :, :, i : i + (hout - 1) * stride + 1 : stride,
                j : j + (wout - 1) * stride + 1 : stride,
            ]
            out += w[:, 0, i, j].reshape(1, c, 1, 1) * patch
    return out


def _conv_im2col(x, w, stride, padding, groups, hout, wout):
    n, cin = x.shape[:2]
    cout, cing, kh, kw = w.shape
    coutg = cout // groups
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wins = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    wins = wins[:, :, ::stride, ::stride]  # (n, cin, hout, wout, kh, kw)
    out = np.empty((n, cout, hout, wout), dtype=np.float32)
    for g in range(groups):
        cols = wins[:, g * cing : (g + 1) * cing]
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n, hout * wout, cing * kh * kw)
        wg = w[g * coutg : (g + 1) * coutg].reshape(coutg, -1)
        og = cols @ wg.T  # (n, hout*wout, coutg)
        out[:, g * coutg : (g + 1) * coutg] = og.transpose(0, 2, 1).reshape(
            n, coutg, hout, wout
        )
    return out


def relu6(x):
    """Elementwise min(max(x, 0), 6)."""
    x = np.asarray(x, dtype=np.float32)
    return np.minimum(np.maximum(x, np.float32(0)), np.float32(6))


def global_avg_pool(x):
    """Mean over the spatial extent; (n, c, h, w) -> (n, c, 1, 1)."""
    x = _as_f32(x, "input", 4)
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError("global_avg_pool needs h, w >= 1")
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float32)


def linear(x, w, b):
    """Affine map x @ w.T + b with x (n, din), w (dout, din), b (dout,)."""
    x = _as_f32(x, "input", 2)
    w = _as_f32(w, "weight", 2)
    b = _as_f32(b, "bias", 1)
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input dim {x.shape[1]} != weight dim {w.shape[1]}")
    if b.shape[0] != w.shape[0]:
        raise ValueError(f"bias length {b.shape[0]} != dout {w.shape[0]}")
    out = x @ w.T + b
    _check_finite(out, "linear output")
    return out


def softmax(logits):
    """Row-wise softmax, stabilised by max subtraction."""
    logits = _as_f32(logits, "logits", 2)
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy loss and its logit gradient.

    Returns ``(loss, grad)`` where loss = mean over the batch of
    -log softmax(logits)[label] and grad = (softmax - onehot) / n.
    """
    logits = _as_f32(logits, "logits", 2)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    _check_finite(logits, "logits")

    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    logp = z[rows, labels] - np.log(denom[:, 0])
    loss = float(-logp.mean(dtype=np.float64))

    grad = ez / denom
    grad[rows, labels] -= 1.0
    grad /= np.float32(n)
    _check_finite(grad, "softmax_xent gradient")
    return loss, grad.astype(np.float32)


def fold_batchnorm(conv_w, conv_b, gamma, beta, mean, var, eps):
    """Fold a batch-norm layer into the preceding convolution.

    Returns (w', b') with w' = w * gamma/sqrt(var+eps) per output channel
    and b' = beta + (b - mean) * gamma/sqrt(var+eps), so that conv2d with
    (w', b') equals conv2d -> batchnorm with the original parameters.
    """
    conv_w = _as_f32(conv_w, "conv weight", 4)
    cout = conv_w.shape[0]
    if conv_b is None:
        conv_b = np.zeros(cout, dtype=np.float32)
    conv_b = _as_f32(conv_b, "conv bias", 1)
    gamma = _as_f32(gamma, "gamma", 1)
    beta = _as_f32(beta, "beta", 1)
    mean = _as_f32(mean, "mean", 1)
    var = _as_f32(var, "var", 1)
    for name, v in (("conv bias", conv_b), ("gamma", gamma), ("beta", beta),
                    ("mean", mean), ("var", var)):
        if v.shape[0] != cout:
            raise ValueError(f"{name} length {v.shape[0]} != cout {cout}")
    if (var < 0).any():
        raise ValueError("var must be non-negative")

    scale = gamma / np.sqrt(var + np.float32(eps))
    w2 = conv_w * scale.reshape(cout, 1, 1, 1)
    b2 = beta + (conv_b - mean) * scale
    _check_finite(w2, "folded weight")
    _check_finite(b2, "folded bias")
    return w2.astype(np.float32), b2.astype(np.float32)
