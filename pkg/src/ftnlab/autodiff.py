"""A small array-level reverse-mode autodiff tape.

Every op accepts plain ``ndarray`` or :class:`Tensor` arguments.  When no
argument is a tensor the op returns an ``ndarray`` so inference runs on bare
numpy with no graph overhead.  Tensors record their parents and a closure that
pushes the output adjoint back; :func:`backward` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), backward=None, name=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.value.shape})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _tracked(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accumulate(t, g):
    if not isinstance(t, Tensor):
        return
    g = _unbroadcast(g, t.value.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _make(out, parents, backward):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    return Tensor(out, parents, backward)


def add(a, b):
    out = value(a) + value(b)
    if not _tracked(a, b):
        return out

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out, (a, b), bw)


def sub(a, b):
    out = value(a) - value(b)
    if not _tracked(a, b):
        return out

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(out, (a, b), bw)


def mul(a, b):
    va, vb = value(a), value(b)
    out = va * vb
    if not _tracked(a, b):
        return out

    def bw(g):
        _accumulate(a, g * vb)
        _accumulate(b, g * va)

    return _make(out, (a, b), bw)


def take(a, idx):
    out = value(a)[idx]
    if not _tracked(a):
        return out

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(out, (a,), bw)


def total(a, axis=None):
    out = value(a).sum(axis=axis)
    if not _tracked(a):
        return out
    shape = a.value.shape

    def bw(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, shape))

    return _make(out, (a,), bw)


def clip(a, limit):
    """Clip to ``[-limit, limit]``; straight-through inside, zero gradient outside."""
    va = value(a)
    out = np.clip(va, -limit, limit)
    if not _tracked(a):
        return out
    inside = np.abs(va) <= limit

    def bw(g):
        _accumulate(a, g * inside)

    return _make(out, (a,), bw)


def shift(a, d):
    """``out[..., i] = a[..., i + d]`` where valid, zero elsewhere."""
    va = value(a)
    out = np.zeros_like(va)
    n = va.shape[-1]
    if abs(d) >= n:
        return out if not _tracked(a) else _make(out, (a,), lambda g: None)
    if d >= 0:
        out[..., : n - d] = va[..., d:]
    else:
        out[..., -d:] = va[..., : n + d]
    if not _tracked(a):
        return out

    def bw(g):
        ga = np.zeros_like(va)
        if d >= 0:
            ga[..., d:] = g[..., : n - d]
        else:
            ga[..., : n + d] = g[..., -d:]
        _accumulate(a, ga)

    return _make(out, (a,), bw)


def pair_llr(p, theta):
    """LLR of ``sum_xj exp(-theta x_i x_j) P(x_j)`` for BPSK, given the LLR ``p`` of ``x_j``.

    ``log[(e^{p - theta} + e^{theta}) / (e^{p + theta} + e^{-theta})]``
    """
    vp, vt = value(p), value(theta)
    a1, a2 = vp - vt, vt
    b1, b2 = vp + vt, -vt
    A = np.logaddexp(a1, a2)
    Bv = np.logaddexp(b1, b2)
    out = A - Bv
    if not _tracked(p, theta):
        return out

    def bw(g):
        w1 = np.exp(a1 - A)
        w2 = np.exp(a2 - A)
        v1 = np.exp(b1 - Bv)
        v2 = np.exp(b2 - Bv)
        _accumulate(p, g * (w1 - v1))
        _accumulate(theta, g * ((w2 - w1) - (v1 - v2)))

    return _make(out, (p, theta), bw)


def neg_relu(a):
    """``-max(0, z)``."""
    va = value(a)
    out = -np.maximum(va, 0.0)
    if not _tracked(a):
        return out

    def bw(g):
        _accumulate(a, -g * (va > 0))

    return _make(out, (a,), bw)


def same_padding(n_in: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output length and (left, right) zero padding for "same" convolution."""
    n_out = -(-n_in // stride)
    pad = max((n_out - 1) * stride + kernel - n_in, 0)
    return n_out, pad // 2, pad - pad // 2


def conv1d(x, w, b, stride: int):
    """Zero-padded "same" 1-D convolution (cross-correlation, no flip).

    ``x``: (B, n_in, c_in); ``w``: (c_out, k, c_in); ``b``: (c_out,).
    Returns (B, ceil(n_in / stride), c_out).
    """
    vx, vw, vb = value(x), value(w), value(b)
    B, n_in, c_in = vx.shape
    c_out, k, _ = vw.shape
    n_out, lo, hi = same_padding(n_in, k, stride)
    xp = np.zeros((B, n_in + lo + hi, c_in))
    xp[:, lo : lo + n_in] = vx
    span = (n_out - 1) * stride + 1
    # windows[b, o, t, c] = xp[b, o * stride + t, c]
    windows = np.stack([xp[:, t : t + span : stride] for t in range(k)], axis=2)
    out = np.einsum("botc,ftc->bof", windows, vw) + vb
    if not _tracked(x, w, b):
        return out

    def bw(g):
        if isinstance(w, Tensor):
            _accumulate(w, np.einsum("bof,botc->ftc", g, windows))
        if isinstance(b, Tensor):
            _accumulate(b, g.sum(axis=(0, 1)))
        if isinstance(x, Tensor):
            gw = np.einsum("bof,ftc->botc", g, vw)
            gxp = np.zeros_like(xp)
            for t in range(k):
                gxp[:, t : t + span : stride] += gw[:, :, t]
            _accumulate(x, gxp[:, lo : lo + n_in])

    return _make(out, (x, w, b), bw)


def dense(x, w, b):
    """``x @ w + b`` with ``x`` of shape (B, n_in)."""
    vx, vw, vb = value(x), value(w), value(b)
    out = vx @ vw + vb
    if not _tracked(x, w, b):
        return out

    def bw(g):
        _accumulate(x, g @ vw.T)
        _accumulate(w, vx.T @ g)
        _accumulate(b, g.sum(axis=0))

    return _make(out, (x, w, b), bw)


def reshape(a, shape):
    va = value(a)
    out = va.reshape(shape)
    if not _tracked(a):
        return out

    def bw(g):
        _accumulate(a, g.reshape(va.shape))

    return _make(out, (a,), bw)


def softplus(a):
    va = value(a)
    out = np.logaddexp(0.0, va)
    if not _tracked(a):
        return out

    def bw(g):
        _accumulate(a, g * 0.5 * (1.0 + np.tanh(0.5 * va)))

    return _make(out, (a,), bw)


def backward(root: Tensor, seed=None):
    """Populate ``.grad`` on every tensor reachable from ``root``."""
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        if node.parents:
            node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=float)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
