"""Forward and backward kernels for the layer kinds used by the models.

All tensors are float64 numpy arrays; images and feature maps are laid out
as (batch, channels, height, width). Kernels are pure: nothing passed in is
modified, and batchnorm returns updated running statistics instead of
writing them back.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes do not fit an operation."""


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects a 4-D NCHW tensor, got shape {x.shape}")


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding (before, after) for 'same' mode; the odd pixel goes after."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        return (size - kernel) // stride + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def _pad_input(x: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        pt, pb = same_padding(x.shape[2], kh, stride)
        pl, pr = same_padding(x.shape[3], kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    return x, (pt, pb, pl, pr)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view, no copy
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d_forward(x, weights, bias, stride=1, padding="same"):
    """2-D cross-correlation. Returns ``(out, cache)``."""
    _check_4d(x, "conv2d")
    if weights.ndim != 4 or weights.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d input shape {x.shape} does not match weight shape {weights.shape}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    f, _, kh, kw = weights.shape
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {f} filters")
    xp, pads = _pad_input(x, kh, kw, stride, padding)
    if kh > xp.shape[2] or kw > xp.shape[3]:
        raise ShapeError(
            f"conv2d kernel {weights.shape} larger than padded input {xp.shape}"
        )
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo]
        out = np.einsum("nchw,fc->nfhw", cols, weights[:, :, 0, 0], optimize=True)
    else:
        cols = _windows(xp, kh, kw, stride, ho, wo)
        out = np.tensordot(cols, weights, axes=([1, 4, 5], [1, 2, 3]))  # N,Ho,Wo,F
        out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    cache = {"x_shape": x.shape, "xp": xp, "pads": pads, "weights": weights,
             "stride": stride, "has_bias": bias is not None}
    return out, cache


def conv2d_backward(upstream, cache):
    """Returns ``(dx, dweights, dbias)``; ``dbias`` is None for bias-free convs."""
    xp, w, s = cache["xp"], cache["weights"], cache["stride"]
    f, c, kh, kw = w.shape
    n, _, ho, wo = upstream.shape
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::s, ::s][:, :, :ho, :wo]
        dw = np.einsum("nfhw,nchw->fc", upstream, cols, optimize=True)[:, :, None, None]
        dcols = np.einsum("nfhw,fc->nchw", upstream, w[:, :, 0, 0], optimize=True)
        dxp = np.zeros_like(xp)
        dxp[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s] = dcols
    else:
        cols = _windows(xp, kh, kw, s, ho, wo)
        dw = np.tensordot(upstream, cols, axes=([0, 2, 3], [0, 2, 3]))  # F,C,kh,kw
        dcols = np.tensordot(upstream, w, axes=([1], [0]))  # N,Ho,Wo,C,kh,kw
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
    pt, pb, pl, pr = cache["pads"]
    dx = dxp[:, :, pt : dxp.shape[2] - pb, pl : dxp.shape[3] - pr]
    db = upstream.sum(axis=(0, 2, 3)) if cache["has_bias"] else None
    return np.ascontiguousarray(dx), dw, db


def maxpool2d_forward(x, pool=2, stride=2):
    """Max pooling without padding; trailing rows/columns that do not fill a window are dropped.

    Returns ``(out, argmax)`` where ``argmax`` holds the flat index into each
    (h, w) input plane of the winning element. Ties go to the first element
    in row-major scan order.
    """
    _check_4d(x, "maxpool2d")
    if pool < 1 or stride < 1:
        raise ValueError(f"pool and stride must be >= 1, got {pool}, {stride}")
    n, c, h, w = x.shape
    if pool > h or pool > w:
        raise ShapeError(f"pool size {pool} larger than input spatial dims {(h, w)}")
    ho = (h - pool) // stride + 1
    wo = (w - pool) // stride + 1
    win = _windows(x, pool, pool, stride, ho, wo).reshape(n, c, ho, wo, pool * pool)
    local = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * stride + local // pool
    cols = np.arange(wo)[None, :] * stride + local % pool
    return np.ascontiguousarray(out), rows * w + cols


def maxpool2d_backward(upstream, argmax, input_shape):
    n, c, h, w = input_shape
    dx = np.zeros((n * c, h * w))
    idx = argmax.reshape(n * c, -1)
    # windows may overlap when stride < pool, so accumulate
    np.add.at(dx, (np.arange(n * c)[:, None], idx), upstream.reshape(n * c, -1))
    return dx.reshape(input_shape)


def global_avg_pool_forward(x):
    _check_4d(x, "global_avg_pool")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(upstream, input_shape):
    n, c, h, w = input_shape
    return np.broadcast_to((upstream / (h * w))[:, :, None, None], input_shape).copy()


def dense_forward(x, weights, bias):
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense input shape {x.shape} does not match weight shape {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense bias shape {bias.shape} does not match weights {weights.shape}")
    return x @ weights + bias


def dense_backward(upstream, x, weights):
    return upstream @ weights.T, x.T @ upstream, upstream.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(upstream, x):
    return upstream * (x > 0)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps=1e-5, momentum=0.9):
    """Per-channel batch normalization over (N, H, W).

    Returns ``(out, cache, (new_running_mean, new_running_var))``. In
    inference mode the running statistics are returned unchanged.
    """
    _check_4d(x, "batchnorm")
    c = x.shape[1]
    for name, p in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if p.shape != (c,):
            raise ShapeError(f"batchnorm {name} shape {p.shape} does not match {c} channels")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if np.any(running_var <= 0):
        raise ValueError("batchnorm running variance must be strictly positive")
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_stats = (momentum * running_mean + (1 - momentum) * mean,
                     momentum * running_var + (1 - momentum) * var)
    else:
        mean, var = running_mean, running_var
        new_stats = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "train": train}
    return out, cache, new_stats


def batchnorm_backward(upstream, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    dgamma = (upstream * xhat).sum(axis=(0, 2, 3))
    dbeta = upstream.sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if not cache["train"]:
        return upstream * scale, dgamma, dbeta
    m = upstream.shape[0] * upstream.shape[2] * upstream.shape[3]
    dx = scale * (
        upstream
        - (dbeta / m)[None, :, None, None]
        - xhat * (dgamma / m)[None, :, None, None]
    )
    return dx, dgamma, dbeta


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels; returns ``(loss, grad_logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
