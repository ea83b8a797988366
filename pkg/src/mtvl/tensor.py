"""Minimal reverse-mode autodiff over dense numpy arrays.

Define-by-run: every op eagerly computes its value and records a backward
closure. Node ids are globally monotonic, so reverse insertion order gives
a deterministic backward traversal.
"""

import itertools
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_node_counter = itertools.count()
_grad_enabled = True

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    """Raised for log/sqrt of nonpositive inputs (no silent NaNs)."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(out_data, parents, backward_fn):
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss):
    """Reverse-mode sweep from a scalar loss.

    Populates .grad on every reachable requires_grad tensor; grads
    accumulate additively across fan-out and across repeated calls.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # collect reachable nodes; reverse insertion order = reverse node_id
    seen = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in seen:
            continue
        seen[t.node_id] = t
        stack.extend(t._parents)
    loss._accumulate(np.ones_like(loss.data))
    for nid in sorted(seen, reverse=True):
        t = seen[nid]
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)
    # intermediate grads are not needed after the sweep
    for t in seen.values():
        if t._backward is not None:
            t.grad = None


def ensure_grads(tensors):
    """Zero-fill grads on leaves unreachable from the loss."""
    for t in tensors:
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------- basic ops

def add(a, b):
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), bwd)


def sub(a, b):
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out, (a, b), bwd)


def mul(a, b):
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bwd)


def div(a, b):
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), bwd)


def scalar_mul(a, s):
    s = float(s)
    out = a.data * s

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(out, (a,), bwd)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out, (a, b), bwd)


def transpose(a, axes=None):
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = list(range(a.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.transpose(a.data, axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(out, (a,), bwd)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out, tensors, bwd)


def slice_(a, index):
    """Basic (non-fancy) slicing; index is anything numpy basic indexing takes."""
    out = a.data[index]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] += g
            a._accumulate(full)

    return _make(out, (a,), bwd)


def gather_rows(a, indices):
    """a: [B, T, ...], indices: [B] ints -> out [B, ...] (row per batch item)."""
    indices = np.asarray(indices)
    batch = np.arange(a.shape[0])
    out = a.data[batch, indices]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (batch, indices), g)
            a._accumulate(full)

    return _make(out, (a,), bwd)


def embedding(table, ids):
    """table: [V, d] parameter, ids: int array -> out ids.shape + (d,)."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accumulate(full)

    return _make(out, (table,), bwd)


# ------------------------------------------------------------ pointwise ops

def exp(a):
    out = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _make(out, (a,), bwd)


def log(a):
    if np.any(a.data <= 0):
        raise DomainError("log of nonpositive input")
    out = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out, (a,), bwd)


def sqrt(a):
    if np.any(a.data <= 0):
        raise DomainError("sqrt of nonpositive input")
    out = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out)

    return _make(out, (a,), bwd)


def sigmoid(a):
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def relu(a):
    out = np.maximum(a.data, 0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(out, (a,), bwd)


def gelu(a):
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = x * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
            a._accumulate(g * (cdf + x * pdf))

    return _make(out, (a,), bwd)


def clamp_min(a, lo):
    """max(a, lo); gradient is zero on the clamped branch."""
    out = np.maximum(a.data, lo)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > lo))

    return _make(out, (a,), bwd)


def clamp_max(a, hi):
    """min(a, hi); gradient is zero on the clamped branch."""
    out = np.minimum(a.data, hi)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data < hi))

    return _make(out, (a,), bwd)


# ------------------------------------------------------------ reductions

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.shape[axis]

    def bwd(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape) / n)

    return _make(out, (a,), bwd)


def softmax(a, axis=-1):
    """Max-subtracted softmax along `axis`."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            a._accumulate(out * (g - dot))

    return _make(out, (a,), bwd)


def l2norm(a, axis=-1, keepdims=True, floor=1e-12):
    """Euclidean norm along `axis`, floored at `floor` (never zero).

    Gradient is x/norm on the live branch, zero where the floor engaged.
    """
    raw = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    out = np.maximum(raw, floor)
    live = raw > floor
    if not keepdims:
        out_v = np.squeeze(out, axis=axis)
    else:
        out_v = out

    def bwd(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.where(live, g * a.data / out, 0.0))

    return _make(out_v, (a,), bwd)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then affine: gain * x_hat + bias.

    Constant inputs map to zeros pre-affine (variance floored by eps).
    """
    if gain.shape != a.shape[-1:] or bias.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm: affine shapes {gain.shape}/{bias.shape} do not match feature dim {a.shape[-1:]}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data
    d = a.shape[-1]

    def bwd(g):
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gx - m1 - xhat * m2))

    return _make(out, (a, gain, bias), bwd)
