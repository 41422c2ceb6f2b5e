"""Slow, obviously-correct references used to check the vectorized code."""

from __future__ import annotations

import math

import numpy as np

from fundusnet.neuralnet import layers as L


def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    if padding == "same":
        ho, wo = math.ceil(h / stride), math.ceil(wd / stride)
        th = max((ho - 1) * stride + kh - h, 0)
        tw = max((wo - 1) * stride + kw - wd, 0)
        top, left = th // 2, tw // 2
    else:
        ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
        top = left = 0
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[fi] if b is not None else 0.0
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                r = i * stride + di - top
                                s = j * stride + dj - left
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[ni, ci, r, s] * w[fi, ci, di, dj]
                    out[ni, fi, i, j] = acc
    return out


def naive_maxpool(x, pool, stride):
    n, c, h, w = x.shape
    ho, wo = (h - pool) // stride + 1, (w - pool) // stride + 1
    out = np.zeros((n, c, ho, wo))
    arg = np.zeros((n, c, ho, wo), dtype=int)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    best, best_idx = -np.inf, -1
                    for di in range(pool):
                        for dj in range(pool):
                            r, s = i * stride + di, j * stride + dj
                            if x[ni, ci, r, s] > best:
                                best, best_idx = x[ni, ci, r, s], r * w + s
                    out[ni, ci, i, j] = best
                    arg[ni, ci, i, j] = best_idx
    return out, arg


def naive_gap(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c))
    for ni in range(n):
        for ci in range(c):
            total = 0.0
            for i in range(h):
                for j in range(w):
                    total += x[ni, ci, i, j]
            out[ni, ci] = total / (h * w)
    return out


def naive_dense(x, w, b):
    n, d = x.shape
    m = w.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = b[j]
            for k in range(d):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


def brute_force_scores(labels, preds, positive):
    """Precision, sensitivity, F1 and accuracy by walking (label, prediction) pairs."""
    hits = sum(1 for y, p in zip(labels, preds) if y == p)
    pred_pos = [y for y, p in zip(labels, preds) if p == positive]
    actual_pos = [p for y, p in zip(labels, preds) if y == positive]
    precision = (sum(1 for y in pred_pos if y == positive) / len(pred_pos)) if pred_pos else 0.0
    sensitivity = (sum(1 for p in actual_pos if p == positive) / len(actual_pos)) if actual_pos else 0.0
    f1 = (2 * precision * sensitivity / (precision + sensitivity)
          if precision + sensitivity else 0.0)
    return hits / len(labels), precision, sensitivity, f1


def conv_params(cin, cout, k, bias):
    return cin * cout * k * k + (cout if bias else 0)


def resnet_backbone_params(depth, version, mult=1):
    """Trainable parameter count of a bottleneck ResNet, computed from the block table."""
    blocks = {50: (3, 4, 6, 3), 101: (3, 4, 23, 3), 152: (3, 8, 36, 3)}[depth]
    stem = int(64 * mult)
    total = conv_params(3, stem, 7, bias=(version == "v2"))
    if version == "v1":
        total += 2 * stem
    cin = stem
    for stage, count in enumerate(blocks):
        mid = int(64 * 2**stage * mult)
        out = 4 * mid
        for b in range(count):
            proj = b == 0
            total += conv_params(cin, mid, 1, False) + conv_params(mid, mid, 3, False)
            total += conv_params(mid, out, 1, False)
            if version == "v1":
                total += 2 * (mid + mid + out)
                if proj:
                    total += conv_params(cin, out, 1, False) + 2 * out
            else:
                total += 2 * (cin + mid + mid)
                if proj:
                    total += conv_params(cin, out, 1, False)
            cin = out
    if version == "v2":
        total += 2 * cin
    return total


H = 1e-5


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def finite_difference(f, x, upstream, h=H):
    """Central differences of ``sum(upstream * f(x))`` w.r.t. every entry of ``x``.

    The output difference is formed before contracting with ``upstream`` so
    unaffected outputs cancel exactly.
    """
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        plus = f(x)
        x[idx] = old - h
        minus = f(x)
        x[idx] = old
        grad[idx] = np.sum(upstream * (plus - minus)) / (2 * h)
    return grad


def layer_gradient_error(spec, params, x, upstream, train=True):
    """Max per-coordinate relative error of ``layer_vjp`` against finite differences,
    over the input and every trainable parameter."""
    _, tape, _ = L.layer_forward(spec, params, x, train)
    dx, dparams = L.layer_vjp(spec, tape, upstream)
    x = x.copy()
    worst = rel_err(dx, finite_difference(lambda v: L.layer_forward(spec, params, v, train)[0],
                                          x, upstream)).max()
    for name, g in dparams.items():
        p = params[name].copy()

        def f(v, name=name):
            trial = dict(params)
            trial[name] = v
            return L.layer_forward(spec, trial, x, train)[0]

        worst = max(worst, rel_err(g, finite_difference(f, p, upstream)).max())
    return float(worst)
