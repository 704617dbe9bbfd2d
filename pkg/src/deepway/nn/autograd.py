"""A small tape-based reverse-mode autodiff over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
pushing the output gradient back to them. :func:`backward` walks the graph in
reverse topological order. Only the ops the waypoint network needs exist.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward, name=None):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data, name=name)
    return Tensor(data, name=name, _parents=parents, _backward=backward)


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring gradients."""
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, root.data.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # free intermediate gradients and closures as soon as they are used
            node._backward = None
            node._parents = ()
            node.grad = None if node is not root else node.grad


# elementwise ------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), bw)


def _mish_parts(x: np.ndarray):
    # tanh(softplus(x)) = n(n+2) / (n(n+2) + 2) with n = e^x; the clip only
    # matters where the ratio is already 1 in floating point
    shape = np.shape(x)
    n = np.minimum(np.atleast_1d(x), 20).astype(np.result_type(x, np.float32), copy=False)
    np.exp(n, out=n)
    a = n + 2
    a *= n
    t = a + 2
    np.divide(a, t, out=t)
    return t.reshape(shape), n.reshape(shape)


def mish_np(x: np.ndarray) -> np.ndarray:
    """x * tanh(softplus(x)), finite for any finite x."""
    t, _ = _mish_parts(np.asarray(x))
    return x * t


def mish(x: Tensor) -> Tensor:
    """x * tanh(softplus(x))."""
    t, n = _mish_parts(x.data)
    y = x.data * t

    def bw(g):
        # d/dx = t + x (1 - t^2) sigmoid(x), sigmoid(x) = n / (1 + n)
        s = n + 1
        np.divide(n, s, out=s)
        d = t * t
        np.subtract(1, d, out=d)
        d *= s
        d *= x.data
        d += t
        d *= g
        _accum(x, d)
    return _node(y, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def bw(g):
        _accum(x, g * y * (1 - y))
    return _node(y, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1 - y * y))
    return _node(y, (x,), bw)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0

    def bw(g):
        _accum(x, g * pos)
    return _node(np.where(pos, x.data, 0), (x,), bw)


# reductions / shape --------------------------------------------------------------

def mean(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    y = x.data.mean(axis=axis, keepdims=keepdims)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = int(np.prod([x.shape[a] for a in axes]))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g / n, x.shape))
    return _node(y, (x,), bw)


def amax(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    """Maximum; the gradient is shared evenly between tied maxima."""
    y = x.data.max(axis=axis, keepdims=True)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        hit = x.data == y
        _accum(x, hit * (g / hit.sum(axis=axes, keepdims=True)))
    return _node(y if keepdims else np.squeeze(y, axis=axes), (x,), bw)


def concat(xs, axis: int = -1) -> Tensor:
    y = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bw(g):
        for t, part in zip(xs, np.split(g, bounds, axis=axis)):
            _accum(t, part)
    return _node(y, xs, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)
    return _node(a.data @ b.data, (a, b), bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(x, g.reshape(x.shape))
    return _node(x.data.reshape(shape), (x,), bw)


# convolutions ---------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded convolution; see :func:`kernels.conv2d`."""
    y = kernels.conv2d(x.data, w.data, None if b is None else b.data, stride)
    K = w.shape[0]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            _accum(x, kernels.conv2d_grad_input(g, w.data, stride, x.shape[1:3]))
        if w.requires_grad:
            _accum(w, kernels.conv2d_grad_weight(x.data, g, K, stride))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 1, 2)))
    return _node(y, parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transpose convolution; ``w`` is ``(K, K, C_out, C_in)``."""
    y = kernels.conv_transpose2d(x.data, w.data, None if b is None else b.data, stride)
    K = w.shape[0]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            _accum(x, kernels.conv2d(g, w.data, None, stride))
        if w.requires_grad:
            _accum(w, kernels.conv2d_grad_weight(g, x.data, K, stride))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 1, 2)))
    return _node(y, parents, bw)


# network-specific fused ops -------------------------------------------------------

def heads(z: Tensor) -> Tensor:
    """Sigmoid on channel 0 (confidence), tanh on channels 1-2 (offsets)."""
    p = expit(z.data[..., :1])
    d = np.tanh(z.data[..., 1:])
    y = np.concatenate([p, d], axis=-1)

    def bw(g):
        gz = np.empty_like(z.data)
        gz[..., :1] = g[..., :1] * p * (1 - p)
        gz[..., 1:] = g[..., 1:] * (1 - d * d)
        _accum(z, gz)
    return _node(y, (z,), bw)


def waypoint_loss(target: np.ndarray, pred: Tensor, lambda_wp: float, lambda_nowp: float) -> Tensor:
    """Weighted sum-squared error summed over cells and averaged over the batch.

    Waypoint cells (target channel 0 == 1) are penalized on all three channels
    with ``lambda_wp``; empty cells only on the confidence channel with
    ``lambda_nowp``.
    """
    if target.shape != pred.shape or target.shape[-1] != 3:
        raise kernels.ShapeError(f"target {target.shape} and prediction {pred.shape} differ")
    wp = target[..., :1]
    w = np.empty_like(pred.data)
    w[..., :1] = lambda_wp * wp + lambda_nowp * (1 - wp)
    w[..., 1:] = lambda_wp * wp
    diff = pred.data - target
    nb = pred.shape[0] if pred.data.ndim == 4 else 1
    val = np.sum(w * diff * diff) / nb

    def bw(g):
        _accum(pred, (2 * g / nb) * w * diff)
    return _node(np.asarray(val, dtype=pred.data.dtype), (pred,), bw)
