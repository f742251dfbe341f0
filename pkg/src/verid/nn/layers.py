"""Forward and backward passes for the layers of the verification CNN.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Arrays are NCHW. The dtype of the inputs is kept,
so the same code runs the float32 training path and the float64 gradient
checks.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BatchTooSmall, MissingCache, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def conv_output_size(size, kernel, stride):
    return (size - kernel) // stride + 1


def conv_forward(x, w, b, stride=(1, 1)):
    """Valid (unpadded) cross-correlation plus bias.

    x: (B, C, H, W); w: (O, C, kh, kw); b: (O,). Returns (B, O, H', W').
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv expects 4-d input and weights, got {x.shape} and {w.shape}")
    n_out, c_in, kh, kw = w.shape
    sh, sw = stride
    if x.shape[1] != c_in:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {c_in}")
    if kh > x.shape[2] or kw > x.shape[3]:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than input {x.shape[2]}x{x.shape[3]}")
    # (B, C, H', W', kh, kw)
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, H', W', O)
    out = out.transpose(0, 3, 1, 2) + b.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out), (x, w, stride)


def conv_backward(dout, cache):
    if cache is None:
        raise MissingCache("conv_backward called without a forward cache")
    x, w, (sh, sw) = cache
    _, _, kh, kw = w.shape
    _, _, ho, wo = dout.shape
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # (B, H', W', C, kh, kw)
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    dx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += dcols[..., i, j]
    return dx, dw, db


def fc_forward(x, w, b):
    """Affine map y = x W^T + b with W of shape (out, in); x is flattened past the batch axis."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"fc expects {w.shape[1]} inputs, got {flat.shape[1]}")
    return flat @ w.T + b, (x, w)


def fc_backward(dout, cache):
    if cache is None:
        raise MissingCache("fc_backward called without a forward cache")
    x, w = cache
    flat = x.reshape(x.shape[0], -1)
    dx = (dout @ w).reshape(x.shape)
    return dx, dout.T @ flat, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    if cache is None:
        raise MissingCache("relu_backward called without a forward cache")
    return dout * (cache > 0)


def _bn_axes(x):
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _per_channel(v, x):
    return v.reshape(1, -1, 1, 1) if x.ndim == 4 else v.reshape(1, -1)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train"):
    """Per-channel batch normalization.

    In train mode the batch statistics normalize ``x`` and the running
    statistics are updated in place with momentum 0.9. In eval mode the
    running statistics are used and nothing is mutated.
    """
    axes = _bn_axes(x)
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("batch norm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= BN_MOMENTUM
        running_mean += (1 - BN_MOMENTUM) * mean.astype(running_mean.dtype)
        running_var *= BN_MOMENTUM
        running_var += (1 - BN_MOMENTUM) * var.astype(running_var.dtype)
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batch norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _per_channel(mean, x)) * _per_channel(inv_std, x)
    out = _per_channel(gamma, x) * xhat + _per_channel(beta, x)
    return out.astype(x.dtype, copy=False), (xhat, gamma, inv_std, mode)


def batchnorm_backward(dout, cache):
    if cache is None:
        raise MissingCache("batchnorm_backward called without a forward cache")
    xhat, gamma, inv_std, mode = cache
    axes = _bn_axes(dout)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * _per_channel(gamma, dout)
    if mode == "eval":
        return dxhat * _per_channel(inv_std, dout), dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = (
        _per_channel(inv_std / m, dout)
        * (m * dxhat - dxhat.sum(axis=axes, keepdims=True) - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
    )
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta
