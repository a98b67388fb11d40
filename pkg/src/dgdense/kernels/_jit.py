"""Numba-jitted hot kernels (default path when numba is importable).

Loop kernels beat vectorized numpy here because the tensors are small and
every numpy op pays dispatch overhead; matmul is left to BLAS. cache=True so
compilation is paid once per machine, not once per process.
"""

import math

import numpy as np
from numba import njit

from . import _impl

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


@njit(cache=True)
def layernorm_fwd(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    mu = np.empty(n)
    rstd = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        m = s / d
        q = 0.0
        for j in range(d):
            t = x[i, j] - m
            q += t * t
        r = 1.0 / math.sqrt(q / d + eps)
        mu[i] = m
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - m) * r * gamma[j] + beta[j]
    return y, mu, rstd


@njit(cache=True)
def layernorm_bwd(dy, x, gamma, mu, rstd):
    n, d = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xh = (x[i, j] - mu[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xh
            dgamma[j] += dy[i, j] * xh
            dbeta[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (x[i, j] - mu[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = rstd[i] * (dxh - m1 - xh * m2)
    return dx, dgamma, dbeta


@njit(cache=True)
def softmax_fwd(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - mx)
            y[i, j] = e
            s += e
        for j in range(d):
            y[i, j] /= s
    return y


@njit(cache=True)
def softmax_bwd(dy, y):
    n, d = y.shape
    dx = np.empty_like(y)
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += dy[i, j] * y[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - dot)
    return dx


@njit(cache=True)
def gelu_fwd(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        out[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))
    return out


@njit(cache=True)
def gelu_bwd(dy, x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        phi = math.exp(-0.5 * v * v) * _INV_SQRT2PI
        out[i] = dy[i] * (0.5 * (1.0 + math.erf(v * _INV_SQRT2)) + v * phi)
    return out


@njit(cache=True)
def sigmoid_fwd(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            out[i] = e / (1.0 + e)
    return out


@njit(cache=True)
def sigmoid_bwd(dy, y):
    out = np.empty_like(y)
    for i in range(y.size):
        out[i] = dy[i] * y[i] * (1.0 - y[i])
    return out


@njit(cache=True)
def cross_entropy_fwd(logits, targets, weights):
    n, c = logits.shape
    probs = np.empty_like(logits)
    losses = np.empty(n)
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(c):
            e = math.exp(logits[i, j] - mx)
            probs[i, j] = e
            s += e
        for j in range(c):
            probs[i, j] /= s
        t = targets[i]
        losses[i] = (math.log(s) - (logits[i, t] - mx)) * weights[t]
    return losses, probs


@njit(cache=True)
def bce_logits_fwd(x, y):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        out[i] = max(v, 0.0) - v * y[i] + math.log1p(math.exp(-abs(v)))
    return out


@njit(cache=True)
def bce_logits_bwd(dy, x, y):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v >= 0.0:
            s = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            s = e / (1.0 + e)
        out[i] = dy[i] * (s - y[i])
    return out


@njit(cache=True)
def adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd):
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(p.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        mhat = m[i] / c1
        vhat = v[i] / c2
        p[i] = p[i] - lr * wd * p[i] - lr * mhat / (math.sqrt(vhat) + eps)


@njit(cache=True)
def resize_bilinear_fwd(src, H, W):
    n, h, w = src.shape
    out = np.empty((n, H, W))
    sy = h / H
    sx = w / W
    for i in range(H):
        fy = (i + 0.5) * sy - 0.5
        y0 = int(math.floor(fy))
        wy = fy - y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for j in range(W):
            fx = (j + 0.5) * sx - 0.5
            x0 = int(math.floor(fx))
            wx = fx - x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            for k in range(n):
                out[k, i, j] = (src[k, y0c, x0c] * (1 - wy) * (1 - wx)
                                + src[k, y0c, x1c] * (1 - wy) * wx
                                + src[k, y1c, x0c] * wy * (1 - wx)
                                + src[k, y1c, x1c] * wy * wx)
    return out


@njit(cache=True)
def resize_bilinear_bwd(dout, h, w):
    n, H, W = dout.shape
    dsrc = np.zeros((n, h, w))
    sy = h / H
    sx = w / W
    for i in range(H):
        fy = (i + 0.5) * sy - 0.5
        y0 = int(math.floor(fy))
        wy = fy - y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for j in range(W):
            fx = (j + 0.5) * sx - 0.5
            x0 = int(math.floor(fx))
            wx = fx - x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            for k in range(n):
                d = dout[k, i, j]
                dsrc[k, y0c, x0c] += d * (1 - wy) * (1 - wx)
                dsrc[k, y0c, x1c] += d * (1 - wy) * wx
                dsrc[k, y1c, x0c] += d * wy * (1 - wx)
                dsrc[k, y1c, x1c] += d * wy * wx
    return dsrc


@njit(cache=True)
def confusion_update(cm, pred, gt, ignore):
    for i in range(pred.size):
        g = gt[i]
        if g != ignore:
            cm[g, pred[i]] += 1


@njit(cache=True)
def affine_warp(img, inv, out_h, out_w, fill, bilinear):
    h, w, c = img.shape
    out = np.empty((out_h, out_w, c))
    for i in range(out_h):
        for j in range(out_w):
            sx = inv[0, 0] * j + inv[0, 1] * i + inv[0, 2]
            sy = inv[1, 0] * j + inv[1, 1] * i + inv[1, 2]
            if bilinear:
                x0 = int(math.floor(sx))
                y0 = int(math.floor(sy))
                wx = sx - x0
                wy = sy - y0
                for k in range(c):
                    acc = 0.0
                    for dy_ in range(2):
                        for dx_ in range(2):
                            yy = y0 + dy_
                            xx = x0 + dx_
                            wgt = (wy if dy_ else 1 - wy) * (wx if dx_ else 1 - wx)
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += img[yy, xx, k] * wgt
                            else:
                                acc += fill * wgt
                    out[i, j, k] = acc
            else:
                xi = int(math.floor(sx + 0.5))
                yi = int(math.floor(sy + 0.5))
                if 0 <= yi < h and 0 <= xi < w:
                    for k in range(c):
                        out[i, j, k] = img[yi, xi, k]
                else:
                    for k in range(c):
                        out[i, j, k] = fill
    return out


lap_min_cost = njit(cache=True)(_impl.lap_min_cost)
