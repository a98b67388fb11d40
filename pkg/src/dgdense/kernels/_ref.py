"""Vectorized numpy implementations of the hot kernels.

This is the fallback path (DGDENSE_KERNELS=numpy). Same signatures and same
math as the jitted path in _jit.py; summation order may differ at the last ulp.
All arrays are float64 and C-contiguous unless noted.
"""

import numpy as np
from scipy.special import erf

from ._impl import lap_min_cost as _lap_py

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def layernorm_fwd(x, gamma, beta, eps):
    """x (N, D) -> (y, mean (N,), rstd (N,))."""
    mu = x.mean(axis=1)
    var = ((x - mu[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu[:, None]) * rstd[:, None] * gamma + beta
    return y, mu, rstd


def layernorm_bwd(dy, x, gamma, mu, rstd):
    """Gradients for layernorm_fwd. Returns (dx, dgamma, dbeta)."""
    xhat = (x - mu[:, None]) * rstd[:, None]
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return dx, dgamma, dbeta


def softmax_fwd(x):
    """Row-wise stable softmax. x (N, D) -> y (N, D)."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(dy, y):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def gelu_fwd(x):
    """Exact-erf GELU on a flat array."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(dy, x):
    phi = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dy * (0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi)


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(dy, y):
    return dy * y * (1.0 - y)


def cross_entropy_fwd(logits, targets, weights):
    """logits (N, C), targets int64 (N,), weights (C,) -> (losses (N,), probs)."""
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    e = np.exp(z)
    s = e.sum(axis=1)
    probs = e / s[:, None]
    rows = np.arange(logits.shape[0])
    losses = (np.log(s) - z[rows, targets]) * weights[targets]
    return losses, probs


def bce_logits_fwd(x, y):
    """Elementwise binary cross-entropy from logits, numerically stable."""
    return np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))


def bce_logits_bwd(dy, x, y):
    return dy * (sigmoid_fwd(x) - y)


def adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd):
    """Decoupled AdamW step, in place on flat p, m, v. t is the 1-based step."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    p -= lr * wd * p  # decay from the pre-step value
    p -= lr * mhat / (np.sqrt(vhat) + eps)


_RESIZE_CACHE = {}


def _resize_coeffs(h, w, H, W):
    key = (h, w, H, W)
    hit = _RESIZE_CACHE.get(key)
    if hit is not None:
        return hit
    fy = (np.arange(H) + 0.5) * (h / H) - 0.5
    fx = (np.arange(W) + 0.5) * (w / W) - 0.5
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    wy = fy - y0
    wx = fx - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    out = (y0c, y1c, wy, x0c, x1c, wx)
    _RESIZE_CACHE[key] = out
    return out


def resize_bilinear_fwd(src, H, W):
    """src (N, h, w) -> (N, H, W), half-pixel centers, edges clamped."""
    n, h, w = src.shape
    y0, y1, wy, x0, x1, wx = _resize_coeffs(h, w, H, W)
    a = src[:, y0[:, None], x0[None, :]]
    b = src[:, y0[:, None], x1[None, :]]
    c = src[:, y1[:, None], x0[None, :]]
    d = src[:, y1[:, None], x1[None, :]]
    wy_ = wy[None, :, None]
    wx_ = wx[None, None, :]
    return (a * (1 - wy_) * (1 - wx_) + b * (1 - wy_) * wx_
            + c * wy_ * (1 - wx_) + d * wy_ * wx_)


def resize_bilinear_bwd(dout, h, w):
    """Scatter adjoint of resize_bilinear_fwd. dout (N, H, W) -> (N, h, w)."""
    n, H, W = dout.shape
    y0, y1, wy, x0, x1, wx = _resize_coeffs(h, w, H, W)
    dsrc = np.zeros((n, h, w))
    wy_ = wy[None, :, None]
    wx_ = wx[None, None, :]
    yy0 = np.broadcast_to(y0[:, None], (H, W))
    yy1 = np.broadcast_to(y1[:, None], (H, W))
    xx0 = np.broadcast_to(x0[None, :], (H, W))
    xx1 = np.broadcast_to(x1[None, :], (H, W))
    for i in range(n):
        np.add.at(dsrc[i], (yy0, xx0), dout[i] * (1 - wy_[0]) * (1 - wx_[0]))
        np.add.at(dsrc[i], (yy0, xx1), dout[i] * (1 - wy_[0]) * wx_[0])
        np.add.at(dsrc[i], (yy1, xx0), dout[i] * wy_[0] * (1 - wx_[0]))
        np.add.at(dsrc[i], (yy1, xx1), dout[i] * wy_[0] * wx_[0])
    return dsrc


def confusion_update(cm, pred, gt, ignore):
    """Accumulate pixel counts cm[gt, pred] in place, skipping gt == ignore."""
    keep = gt != ignore
    s = cm.shape[0]
    idx = gt[keep] * s + pred[keep]
    cm += np.bincount(idx, minlength=s * s).reshape(s, s).astype(cm.dtype)


def affine_warp(img, inv, out_h, out_w, fill, bilinear):
    """Warp img (h, w, c) by the inverse map inv (2x3): src = inv @ (x, y, 1).

    Coordinates are pixel centers; out-of-bounds reads take `fill`.
    bilinear=False gives nearest-neighbor (for masks).
    """
    h, w, c = img.shape
    ys, xs = np.meshgrid(np.arange(out_h, dtype=np.float64),
                         np.arange(out_w, dtype=np.float64), indexing="ij")
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    if bilinear:
        x0 = np.floor(sx).astype(np.int64)
        y0 = np.floor(sy).astype(np.int64)
        wx = sx - x0
        wy = sy - y0
        out = np.zeros((out_h, out_w, c))
        for (yy, xx, wgt) in ((y0, x0, (1 - wy) * (1 - wx)), (y0, x0 + 1, (1 - wy) * wx),
                              (y0 + 1, x0, wy * (1 - wx)), (y0 + 1, x0 + 1, wy * wx)):
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yc = np.clip(yy, 0, h - 1)
            xc = np.clip(xx, 0, w - 1)
            pix = np.where(valid[:, :, None], img[yc, xc, :], fill)
            out += pix * wgt[:, :, None]
        return out
    xi = np.floor(sx + 0.5).astype(np.int64)
    yi = np.floor(sy + 0.5).astype(np.int64)
    valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    yc = np.clip(yi, 0, h - 1)
    xc = np.clip(xi, 0, w - 1)
    out = img[yc, xc, :].astype(np.float64)
    out = np.where(valid[:, :, None], out, fill)
    return out


def lap_min_cost(cost):
    """Minimum-cost assignment of all rows (n <= m). Returns (total, row_to_col)."""
    return _lap_py(np.ascontiguousarray(cost, dtype=np.float64))
