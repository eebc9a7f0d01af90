"""Rank-4 float64 tensors with reverse-mode differentiation.

Every tensor is laid out as (batch, channels, height, width). Operations build
a graph when any input requires a gradient and grad mode is on; calling
:meth:`Tensor.backward` on a scalar-shaped result walks that graph in reverse
topological order.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import _kernels
from .errors import ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank 4 (N, C, H, W); got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @classmethod
    def _wrap(cls, arr, parents, backward):
        """Build an op result without copying ``arr``."""
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate grads are not kept once propagated
                node.grad = None

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    return Tensor(arr)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise algebra
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._wrap(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._wrap(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._wrap(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return Tensor._wrap(out, (a, b), backward)


def square(x):
    return mul(x, x)


def exp(x):
    out = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out)

    return Tensor._wrap(out, (x,), backward)


def sqrt(x):
    """Square root whose derivative is taken as 0 where the input is 0."""
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        x._accumulate(np.where(out > 0, g / (2.0 * safe), 0.0))

    return Tensor._wrap(out, (x,), backward)


def absolute(x):
    def backward(g):
        x._accumulate(g * np.sign(x.data))

    return Tensor._wrap(np.abs(x.data), (x,), backward)


def clip(x, lo, hi):
    out = np.clip(x.data, lo, hi)

    def backward(g):
        x._accumulate(np.where((x.data >= lo) & (x.data <= hi), g, 0.0))

    return Tensor._wrap(out, (x,), backward)


def maximum(a, b):
    """Elementwise maximum; ties send the gradient to ``a``."""
    pick_a = a.data >= b.data

    def backward(g):
        a._accumulate(_unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        b._accumulate(_unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return Tensor._wrap(np.where(pick_a, a.data, b.data), (a, b), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return Tensor._wrap(np.where(mask, x.data, 0.0), (x,), backward)


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    out = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor._wrap(out, (x,), backward)


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------

def _axes(axis):
    return (axis,) if isinstance(axis, int) else tuple(axis)


def sum_(x, axis=(0, 1, 2, 3)):
    axes = _axes(axis)

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return Tensor._wrap(x.data.sum(axis=axes, keepdims=True), (x,), backward)


def mean(x, axis=(0, 1, 2, 3)):
    axes = _axes(axis)
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return Tensor._wrap(x.data.mean(axis=axes, keepdims=True), (x,), backward)


def spatial_mean(x):
    """Mean over H and W, summed in sorted order.

    The result depends only on the multiset of values in each (n, c) plane,
    so any rearrangement of the pixels gives bit-identical output.
    """
    n, c, h, w = x.shape
    flat = np.sort(x.data.reshape(n, c, h * w), axis=2)
    out = (flat.sum(axis=2) / (h * w)).reshape(n, c, 1, 1)

    def backward(g):
        x._accumulate(np.broadcast_to(g / (h * w), x.shape))

    return Tensor._wrap(out, (x,), backward)


def channel_max(x):
    """Max over channels; the gradient goes to the first maximal channel."""
    idx = np.argmax(x.data, axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        x._accumulate(gx)

    return Tensor._wrap(out, (x,), backward)


def reduce(x, kind):
    if x.data.size == 0:
        raise ShapeError("cannot reduce an empty tensor")
    if kind == "global_avg_per_channel":
        return mean(x, (2, 3))
    if kind == "channelwise_mean_map":
        return mean(x, 1)
    if kind == "channelwise_max_map":
        return channel_max(x)
    raise ValueError(f"unknown reduction {kind!r}")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * 4
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._wrap(out, tuple(tensors), backward)


def take(x, axis, index):
    """Slice ``index:index+1`` along ``axis`` (rank is kept)."""
    sl = [slice(None)] * 4
    sl[axis] = slice(index, index + 1)
    sl = tuple(sl)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        x._accumulate(gx)

    return Tensor._wrap(np.ascontiguousarray(x.data[sl]), (x,), backward)


def reshape(x, shape):
    if len(shape) != 4:
        raise ShapeError(f"reshape target must be rank 4, got {shape}")

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor._wrap(x.data.reshape(shape).copy(), (x,), backward)


def transpose(x, axes):
    inverse = np.argsort(axes)

    def backward(g):
        x._accumulate(g.transpose(inverse))

    return Tensor._wrap(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x, kernel, bias=None, stride=1, padding=0, backend=None):
    """2-D cross-correlation of ``x`` (N, Ci, H, W) with ``kernel`` (Co, Ci, k, k).

    ``bias`` may be ``None`` or any tensor holding ``Co`` values.
    ``padding="same"`` requests size-preserving zero padding (odd k only).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    c_out, c_in, k, k2 = kernel.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got kernel {kernel.shape}")
    if x.shape[1] != c_in:
        raise ShapeError(
            f"input channels do not match kernel: input {x.shape}, kernel {kernel.shape}")
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError(f"'same' padding needs an odd kernel size, got kernel {kernel.shape}")
        padding = (k - 1) // 2
    if stride < 1 or padding < 0:
        raise ValueError(f"need stride >= 1 and padding >= 0, got {stride}, {padding}")
    if bias is None:
        bias_t = None
        b = np.zeros(c_out)
    else:
        bias_t = as_tensor(bias)
        if bias_t.data.size != c_out:
            raise ShapeError(f"bias {bias_t.shape} does not match kernel {kernel.shape}")
        b = np.ascontiguousarray(bias_t.data.reshape(c_out))
    hp, wp = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if hp < k or wp < k:
        raise ShapeError(f"input {x.shape} with padding {padding} is smaller than kernel {kernel.shape}")

    forward, backward_weight, backward_input = _kernels.get_impl(backend)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    w = kernel.data
    out = forward(xp, w, b, stride)
    parents = (x, kernel) if bias_t is None else (x, kernel, bias_t)

    def backward(g):
        g = np.ascontiguousarray(g)
        if kernel.requires_grad:
            kernel._accumulate(backward_weight(xp, g, k, stride))
        if bias_t is not None and bias_t.requires_grad:
            bias_t._accumulate(g.sum(axis=(0, 2, 3)).reshape(bias_t.shape))
        if x.requires_grad:
            gxp = backward_input(g, w, xp.shape, stride)
            if padding:
                gxp = gxp[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]]
            x._accumulate(gxp)

    return Tensor._wrap(out, parents, backward)
