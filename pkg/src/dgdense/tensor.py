"""Reverse-mode autodiff over float64 numpy arrays.

A Tape records every primitive applied to tensors that require gradients;
Tape.backward walks the record once in reverse. Values are immutable during
taped execution (ops allocate, never mutate) and every op output is checked
for NaN/Inf so numerical failures surface at the op that produced them, not
three losses later.
"""

import numpy as np

from . import kernels


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


_ACTIVE_TAPES = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def param(data):
    return Tensor(data, requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitives; context manager activates recording."""

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out, inputs, backward_fn):
        self._entries.append((out, inputs, backward_fn))

    def backward(self, loss):
        """Gradient of scalar `loss` w.r.t. every requires_grad tensor on the tape.

        Populates .grad on leaves (tensors that are not op outputs) and
        returns the full id -> gradient dict.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        produced = {id(out) for out, _, _ in self._entries}
        for out, inputs, backward_fn in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    inp.grad = grads[key]
        return grads


def _tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


# non-finite outputs raise NonFiniteError right below; numpy need not also warn
def _quiet():
    return np.errstate(divide="ignore", invalid="ignore", over="ignore")


def _check_finite(arr, opname):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values out of {opname}")


def _make(out_data, inputs, backward_fn, opname):
    _check_finite(out_data, opname)
    tape = _tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with _quiet():
        out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def exp(x):
    x = as_tensor(x)
    with _quiet():
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = as_tensor(x)
    with _quiet():
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def sqrt(x):
    x = as_tensor(x)
    with _quiet():
        out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def absolute(x):
    x = as_tensor(x)
    out = np.abs(x.data)
    return _make(out, (x,), lambda g: (g * np.sign(x.data),), "abs")


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.maximum(a.data, b.data)
    pick_a = a.data >= b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape),
                            _unbroadcast(g * ~pick_a, b.shape)), "maximum")


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.minimum(a.data, b.data)
    pick_a = a.data <= b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape),
                            _unbroadcast(g * ~pick_a, b.shape)), "minimum")


def matmul(a, b):
    """a @ b for 2-d operands, equal leading batch dims, or ND @ 2D weights."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs >= 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        out = a.data @ b.data

        def bwd_w(g):
            k = b.shape[1]
            d = b.shape[0]
            db = a.data.reshape(-1, d).T @ g.reshape(-1, k)
            return (g @ b.data.T, db)

        return _make(out, (a, b), bwd_w, "matmul")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch dims must match exactly, {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _make(out, (a, b), bwd, "matmul")


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(x, shape):
    x = as_tensor(x)
    out = np.broadcast_to(x.data, shape).copy()
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


def take(x, key):
    """Indexing/gather. Supports basic slices and integer-array indices."""
    x = as_tensor(x)
    out = x.data[key]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out)

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, key, g)
        return (dx,)

    return _make(out, (x,), bwd, "take")


def gather(x, idx):
    """Row gather (embedding lookup): out[i] = x[idx[i]]."""
    return take(x, np.asarray(idx, dtype=np.int64))


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bwd, "sum")


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in ax:
            n *= x.shape[a]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# neural primitives (kernel-backed)
# ---------------------------------------------------------------------------


def _rows(x):
    """View an array as (N, D) over its last axis."""
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    y2 = kernels.softmax_fwd(_rows(x.data))
    out = y2.reshape(x.shape)

    def bwd(g):
        dx = kernels.softmax_bwd(_rows(g), y2)
        return (dx.reshape(x.shape),)

    return _make(out, (x,), bwd, "softmax")


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis, then scale/shift. gamma, beta shape (D,)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError("layer_norm affine params must have shape (last_dim,)")
    x2 = _rows(x.data)
    y2, mu, rstd = kernels.layernorm_fwd(x2, gamma.data, beta.data, eps)

    def bwd(g):
        dx, dgamma, dbeta = kernels.layernorm_bwd(_rows(g), x2, gamma.data, mu, rstd)
        return (dx.reshape(x.shape), dgamma, dbeta)

    return _make(y2.reshape(x.shape), (x, gamma, beta), bwd, "layer_norm")


def gelu(x):
    """Exact (erf-form) GELU."""
    x = as_tensor(x)
    flat = np.ascontiguousarray(x.data.reshape(-1))
    out = kernels.gelu_fwd(flat).reshape(x.shape)

    def bwd(g):
        return (kernels.gelu_bwd(np.ascontiguousarray(g.reshape(-1)), flat).reshape(x.shape),)

    return _make(out, (x,), bwd, "gelu")


def sigmoid(x):
    x = as_tensor(x)
    flat = np.ascontiguousarray(x.data.reshape(-1))
    y = kernels.sigmoid_fwd(flat)

    def bwd(g):
        return (kernels.sigmoid_bwd(np.ascontiguousarray(g.reshape(-1)), y).reshape(x.shape),)

    return _make(y.reshape(x.shape), (x,), bwd, "sigmoid")


def cross_entropy(logits, targets, class_weights=None, normalizer=None):
    """Mean weighted softmax cross-entropy from logits.

    logits (..., C), integer targets (...). Per-row weight is
    class_weights[target]; the weighted sum is divided by `normalizer`
    (row count when None), so a weights vector rescales rows without
    changing the denominator.
    """
    logits = as_tensor(logits)
    c = logits.shape[-1]
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.min(initial=0) < 0 or t.max(initial=0) >= c:
        raise ValueError("cross_entropy target out of range")
    w = np.ones(c) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    x2 = _rows(logits.data)
    if t.shape[0] != x2.shape[0]:
        raise ValueError("cross_entropy targets do not match logit rows")
    losses, probs = kernels.cross_entropy_fwd(x2, t, w)
    denom = float(normalizer) if normalizer is not None else float(x2.shape[0])
    out = np.asarray(losses.sum() / denom)

    def bwd(g):
        dlogits = probs * w[t][:, None]
        dlogits[np.arange(t.shape[0]), t] -= w[t]
        dlogits *= float(g) / denom
        return (dlogits.reshape(logits.shape),)

    return _make(out, (logits,), bwd, "cross_entropy")


def bce_with_logits(x, target, reduction="mean"):
    """Binary cross-entropy from logits against probabilities in [0, 1]."""
    x = as_tensor(x)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError(f"bce target shape {y.shape} != logits shape {x.shape}")
    flat_x = np.ascontiguousarray(x.data.reshape(-1))
    flat_y = np.ascontiguousarray(y.reshape(-1))
    losses = kernels.bce_logits_fwd(flat_x, flat_y)
    if reduction == "none":
        def bwd_none(g):
            return (kernels.bce_logits_bwd(np.ascontiguousarray(g.reshape(-1)),
                                           flat_x, flat_y).reshape(x.shape),)
        return _make(losses.reshape(x.shape), (x,), bwd_none, "bce")
    if reduction != "mean":
        raise ValueError("reduction must be 'mean' or 'none'")
    n = flat_x.size
    out = np.asarray(losses.sum() / n)

    def bwd(g):
        gy = np.full(n, float(g) / n)
        return (kernels.bce_logits_bwd(gy, flat_x, flat_y).reshape(x.shape),)

    return _make(out, (x,), bwd, "bce")


def resize_bilinear(x, out_hw):
    """Bilinear resize of the last two axes (half-pixel centers, clamped edges)."""
    x = as_tensor(x)
    H, W = out_hw
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    src = np.ascontiguousarray(x.data.reshape(-1, h, w))
    out = kernels.resize_bilinear_fwd(src, H, W).reshape(lead + (H, W))

    def bwd(g):
        dg = kernels.resize_bilinear_bwd(np.ascontiguousarray(g.reshape(-1, H, W)), h, w)
        return (dg.reshape(x.shape),)

    return _make(out, (x,), bwd, "resize_bilinear")


def l2_normalize(x, eps=1e-24):
    """Rows scaled to unit L2 norm along the last axis."""
    sq = tsum(mul(x, x), axis=-1, keepdims=True)
    return div(x, sqrt(add(sq, eps)))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(fn, params, h=1e-5, max_coords=None, rng=None):
    """Max relative error between tape gradients and central differences.

    fn() must rebuild the scalar loss from `params` (dict name -> Tensor) on
    every call. When max_coords is set, a seeded random subset of coordinates
    per parameter is probed instead of every entry.
    """
    with Tape() as tape:
        loss = fn()
    if loss.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    tape.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for k, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = range(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        ga = analytic[k].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(ga[i] - fd) / max(abs(ga[i]), abs(fd), 1e-8)
            if err > worst:
                worst = err
    return worst
