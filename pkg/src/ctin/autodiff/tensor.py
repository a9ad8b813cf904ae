"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array. Every differentiable operation returns
a new tensor holding references to its inputs and a closure that maps the
output gradient to input gradients. :meth:`Tensor.backward` walks the graph
once in reverse topological order.

Non-smooth operations (``relu``, ``clip``) report which side of their kink each
element lies on to an optional recorder; :mod:`.gradcheck` uses it to skip
finite-difference probes that straddle a kink.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    pass


_kink_log: list | None = None
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference, finite differences)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the activation pattern of every non-smooth op run inside the block."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _log_kink(*masks):
    if _kink_log is not None:
        for m in masks:
            _kink_log.append(np.packbits(m))


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self):
        return self.value

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operators
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn):
    """Create an op result; only record the graph when some input needs gradients."""
    if not _grad_enabled or not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, requires_grad=True, _parents=parents, _backward=backward_fn)


def _accum(t: Tensor, g, fresh=False):
    """Add ``g`` into ``t.grad``. ``fresh`` marks a newly allocated array that may be adopted without a copy."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if fresh and g.shape == t.shape and g.dtype == np.float64:
            t.grad = g
        else:
            t.grad = np.array(np.broadcast_to(g, t.shape), dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every leaf that requires gradients.

    Leaf gradients add up across calls; intermediate gradients are released
    once propagated.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.shape), fresh=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.shape), fresh=True)

    return _make(a.value * b.value, (a, b), bw)


def div(a, b):
    """Elementwise ``a / b`` with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.value, a.shape), fresh=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.value, b.shape), fresh=True)

    return _make(out, (a, b), bw)


def scale(a, c: float):
    a = as_tensor(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: _accum(a, g * c, fresh=True))


def matmul(a, b):
    """Batched matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape), fresh=True)
        if b.requires_grad:
            if b.ndim == 2:
                # weight shared over all leading axes: one flat GEMM
                av = a.value.reshape(-1, a.shape[-1])
                _accum(b, av.T @ g.reshape(-1, g.shape[-1]), fresh=True)
            else:
                _accum(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape), fresh=True)

    return _make(a.value @ b.value, (a, b), bw)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    _log_kink(mask)
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: _accum(x, g * mask, fresh=True))


def clip(x, lo: float, hi: float):
    x = as_tensor(x)
    below, above = x.value < lo, x.value > hi
    _log_kink(below, above)
    inside = ~(below | above)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: _accum(x, g * inside))


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.value)
    return _make(y, (x,), lambda g: _accum(x, g * y * (1.0 - y)))


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: _accum(x, g * (1.0 - y * y)))


def softplus(x):
    x = as_tensor(x)
    v = x.value
    y = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return _make(y, (x,), lambda g: _accum(x, g * _sigmoid(v)))


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.value)
    return _make(y, (x,), lambda g: _accum(x, g * y))


def log(x):
    x = as_tensor(x)
    if np.any(x.value <= 0):
        raise ValueError("log of non-positive value")
    return _make(np.log(x.value), (x,), lambda g: _accum(x, g / x.value))


def softmax(x, axis: int = -1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get zero weight."""
    x = as_tensor(x)
    v = x.value
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    y = np.exp(v - v.max(axis=axis, keepdims=True))
    y /= y.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)), fresh=True)

    return _make(y, (x,), bw)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def concat(tensors, axis: int = -1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ outside axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=ax)):
            _accum(t, part)

    return _make(np.concatenate([t.value for t in tensors], axis=ax), tuple(tensors), bw)


def index(x, idx):
    """Basic (slice) indexing with gradient scatter."""
    x = as_tensor(x)

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.value)
            full[idx] = g
            _accum(x, full, fresh=True)

    return _make(x.value[idx], (x,), bw)


def slice_time(x, start: int, stop: int):
    """``x[:, start:stop]`` on a ``(batch, time, channel)`` tensor."""
    return index(x, (slice(None), slice(start, stop)))


def reshape(x, shape):
    x = as_tensor(x)
    orig = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: _accum(x, g.reshape(orig)))


def transpose(x, axes=None):
    """Swap the last two axes (time and channel), or apply a full permutation."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    inv = np.argsort(axes)
    return _make(np.transpose(x.value, axes), (x,), lambda g: _accum(x, np.transpose(g, inv)))


def split_heads(x, heads: int):
    """``(B, m, d)`` to ``(B * heads, m, d // heads)``, head-major within each batch item."""
    x = as_tensor(x)
    b, m, d = x.shape
    if d % heads:
        raise ShapeError(f"split_heads: channel size {d} not divisible by {heads} heads")
    y = x.value.reshape(b, m, heads, d // heads).transpose(0, 2, 1, 3).reshape(b * heads, m, d // heads)

    def bw(g):
        _accum(x, g.reshape(b, heads, m, d // heads).transpose(0, 2, 1, 3).reshape(b, m, d))

    return _make(y, (x,), bw)


def merge_heads(x, heads: int):
    """Inverse of :func:`split_heads`."""
    x = as_tensor(x)
    bh, m, dk = x.shape
    b = bh // heads
    y = x.value.reshape(b, heads, m, dk).transpose(0, 2, 1, 3).reshape(b, m, heads * dk)

    def bw(g):
        _accum(x, g.reshape(b, m, heads, dk).transpose(0, 2, 1, 3).reshape(bh, m, dk))

    return _make(y, (x,), bw)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    y = x.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(y, (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(x, axis: int = 1):
    x = as_tensor(x)

    def bw(g):
        _accum(x, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _make(np.cumsum(x.value, axis=axis), (x,), bw)


# ---------------------------------------------------------------------------
# convolution


def conv1d(x, w, bias=None, groups: int = 1):
    """Stride-1 'same' convolution over the time axis.

    ``x`` is ``(B, m, C_in)``, ``w`` is ``(K, C_in // groups, C_out)`` and the
    output is ``(B, m, C_out)``. Zero padding of ``(K - 1) // 2`` on the left
    and ``K // 2`` on the right keeps the length.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected x (B, m, C) and w (K, C/g, C_out), got {x.shape} and {w.shape}")
    bsz, m, cin = x.shape
    k, cin_g, cout = w.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(f"conv1d: input {x.shape} and kernel {w.shape} incompatible with {groups} groups")
    cout_g = cout // groups
    left = (k - 1) // 2
    xp = np.zeros((bsz, m + k - 1, cin))
    xp[:, left : left + m] = x.value
    xg = xp.reshape(bsz, m + k - 1, groups, cin_g)
    wg = w.value.reshape(k, cin_g, groups, cout_g)
    out = np.zeros((bsz, m, groups, cout_g))
    for j in range(k):
        out += np.einsum("bmgc,cgo->bmgo", xg[:, j : j + m], wg[j], optimize=True)
    out = out.reshape(bsz, m, cout)
    parents = (x, w)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.value
        parents = (x, w, bias)

    def bw(g):
        gg = g.reshape(bsz, m, groups, cout_g)
        if x.requires_grad:
            gxp = np.zeros((bsz, m + k - 1, groups, cin_g))
            for j in range(k):
                gxp[:, j : j + m] += np.einsum("bmgo,cgo->bmgc", gg, wg[j], optimize=True)
            _accum(x, gxp.reshape(bsz, m + k - 1, cin)[:, left : left + m])
        if w.requires_grad:
            gw = np.stack([np.einsum("bmgc,bmgo->cgo", xg[:, j : j + m], gg, optimize=True) for j in range(k)])
            _accum(w, gw.reshape(k, cin_g, cout))
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 1)))

    return _make(out, parents, bw)


def attention(q, k, v, mask=None, probe=None):
    """Fused ``softmax(q k^T / sqrt(d_k)) v`` over ``(N, m, d_k)`` tensors.

    Numerically identical to the composite ``matmul``/``scale``/``softmax``
    chain but keeps a single ``(N, m, n)`` weight array alive. ``mask`` is a
    boolean ``(m, n)`` array of allowed pairs; ``probe`` receives the weights.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 3 or k.shape[:1] + k.shape[2:] != q.shape[:1] + q.shape[2:] or v.shape[:2] != k.shape[:2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    c = 1.0 / np.sqrt(q.shape[-1])
    s = q.value @ np.swapaxes(k.value, -1, -2)
    s *= c
    if mask is not None:
        s += np.where(mask, 0.0, -np.inf)
    s -= s.max(axis=-1, keepdims=True)
    w = np.exp(s, out=s)
    w /= w.sum(axis=-1, keepdims=True)
    if probe is not None:
        probe(w)

    def bw(g):
        gw = g @ np.swapaxes(v.value, -1, -2)
        gw -= (gw * w).sum(axis=-1, keepdims=True)
        gw *= w
        gw *= c
        if q.requires_grad:
            _accum(q, gw @ k.value, fresh=True)
        if k.requires_grad:
            _accum(k, np.swapaxes(gw, -1, -2) @ q.value, fresh=True)
        if v.requires_grad:
            _accum(v, np.swapaxes(w, -1, -2) @ g, fresh=True)

    return _make(w @ v.value, (q, k, v), bw)


def pair_attention(a, b, v, probe=None):
    """Fused ``softmax(relu(a + b)) v`` for concatenation-style scores.

    ``a`` is ``(N, m, 1)`` (query term), ``b`` is ``(N, 1, n)`` (key term) and
    ``v`` is ``(N, n, d)``; the softmax runs over the key axis.
    """
    a, b, v = as_tensor(a), as_tensor(b), as_tensor(v)
    pre = a.value + b.value
    active = pre > 0
    _log_kink(active)
    s = np.where(active, pre, 0.0)
    s -= s.max(axis=-1, keepdims=True)
    w = np.exp(s, out=s)
    w /= w.sum(axis=-1, keepdims=True)
    if probe is not None:
        probe(w)

    def bw(g):
        gw = g @ np.swapaxes(v.value, -1, -2)
        gw -= (gw * w).sum(axis=-1, keepdims=True)
        gw *= w
        gw *= active
        if a.requires_grad:
            _accum(a, gw.sum(axis=-1, keepdims=True), fresh=True)
        if b.requires_grad:
            _accum(b, gw.sum(axis=-2, keepdims=True), fresh=True)
        if v.requires_grad:
            _accum(v, np.swapaxes(w, -1, -2) @ g, fresh=True)

    return _make(w @ v.value, (a, b, v), bw)


def linear(x, w, b=None):
    """``x @ w + b``; a 1x1 convolution over time."""
    y = matmul(x, w)
    return y if b is None else add(y, b)
