"""Dense tensors with reverse-mode automatic differentiation on top of numpy.

Every op records its parents and a closure mapping the output gradient to
parent gradients.  ``Tensor.backward`` walks the graph in reverse
topological order.  Graph recording is skipped when no input requires a
gradient.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


def get_default_dtype():
    return getattr(_state, "dtype", np.float64)


def set_default_dtype(dtype):
    _state.dtype = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(get_default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        g = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{g})"

    def __len__(self):
        return len(self.data)

    # -- backward -----------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return transpose(self, None)


def _toposort(root):
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
    order.reverse()
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(dtype or get_default_dtype())
    return Tensor(arr)


def _make(data, parents, backward):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(a, b):
    a = as_tensor(a, b.dtype if isinstance(b, Tensor) else None)
    b = as_tensor(b, a.dtype)
    return a, b


# -- elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float):
    a = as_tensor(a)
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    m = a.data > 0
    return _make(a.data * m, (a,), lambda g: (g * m,))


def leaky_relu(a, slope: float = 0.01):
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def masked_fill(a, mask, value: float):
    """Replace entries where ``mask`` is true by a constant."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask
    return _make(np.where(mask, value, a.data).astype(a.dtype), (a,), lambda g: (g * keep,))


# -- reductions and shape ops -----------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _make(a.data.swapaxes(i, j), (a,), lambda g: (g.swapaxes(i, j),))


def getitem(a, idx):
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back)


def take(a, index, axis: int = 0):
    """Gather along ``axis`` with an integer index array of any shape."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape, dtype = a.shape, a.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        if axis == 0:
            np.add.at(out, index, g)
        else:
            moved = np.moveaxis(out, axis, 0)
            gm = np.moveaxis(g, list(range(axis, axis + index.ndim)), list(range(index.ndim)))
            np.add.at(moved, index, gm)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), (a,), back)


def scatter_add(src, index, n: int):
    """``out[index[k]] += src[k]`` along the first axis of an ``n``-row output."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, index, src.data)
    return _make(out, (src,), lambda g: (g[index],))


def concat(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def stack(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, back)


def matmul(a, b):
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), back)


# -- normalized exponentials --------------------------------------------------------

def softmax(a, axis: int = -1, mask=None):
    """Softmax with max-subtraction.  Entries where ``mask`` is false get zero
    weight; a row with nothing unmasked comes out all zeros."""
    a = as_tensor(a)
    x = a.data
    if np.isnan(x).any():
        raise FloatingPointError("NaN input to softmax")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s == 0, 1.0, s)
    out = out.astype(a.dtype, copy=False)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back)


def log_softmax(a, axis: int = -1, mask=None):
    """Log-softmax; masked entries hold a large negative finite value and get no gradient."""
    a = as_tensor(a)
    x = a.data
    if np.isnan(x).any():
        raise FloatingPointError("NaN input to log_softmax")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    if mask is not None:
        out = np.where(mask, out, -1e30)
    out = out.astype(a.dtype, copy=False)

    def back(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), back)


def segment_softmax(scores, segments, n_segments: int):
    """Softmax of ``scores`` (first axis = items) within groups given by ``segments``."""
    scores = as_tensor(scores)
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) == 0:
        return scores
    x = scores.data
    smax = np.full((n_segments,) + x.shape[1:], -np.inf, dtype=x.dtype)
    np.maximum.at(smax, segments, x)
    shifted = scores - smax[segments]
    e = exp(shifted)
    denom = scatter_add(e, segments, n_segments)
    return e / take(denom, segments)


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = xd.shape[-1]

    def back(g):
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        gx_hat = g * gamma.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(out, (x, gamma, beta), back)


# -- losses --------------------------------------------------------------------------

def nll_loss(logp, target, ignore_index: int = -100, weights=None):
    """Sum of ``-logp[..., target]`` over positions whose target is not ``ignore_index``."""
    logp = as_tensor(logp)
    target = np.asarray(target, dtype=np.int64)
    if target.shape != logp.shape[:-1]:
        raise ValueError(f"target shape {target.shape} does not match {logp.shape[:-1]}")
    valid = target != ignore_index
    vocab = logp.shape[-1]
    if ((target[valid] < 0) | (target[valid] >= vocab)).any():
        raise IndexError(f"gold index out of range for vocabulary of size {vocab}")
    safe = np.where(valid, target, 0)
    w = valid.astype(logp.dtype)
    if weights is not None:
        w = w * np.asarray(weights, dtype=logp.dtype)
    picked = np.take_along_axis(logp.data, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum()
    shape = logp.shape

    def back(g):
        out = np.zeros(shape, dtype=logp.dtype)
        np.put_along_axis(out, safe[..., None], (-w * g)[..., None], axis=-1)
        return (out,)

    return _make(np.asarray(loss, dtype=logp.dtype), (logp,), back)


def lstm_sequence(x, w_ih, w_hh, bias):
    """Unidirectional LSTM over ``x`` of shape [B, T, in] with zero initial states.

    Gate order in the 4h-wide weights is input, forget, cell, output.
    Returns hidden states [B, T, h].  The recurrence is computed in one op
    with a hand-written backward pass through time.
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    xd, Wi, Wh, b = x.data, w_ih.data, w_hh.data, bias.data
    B, T, _ = xd.shape
    H = Wh.shape[0]
    dt = xd.dtype
    xw = xd @ Wi + b  # [B, T, 4H]
    hs = np.zeros((B, T + 1, H), dtype=dt)
    cs = np.zeros((B, T + 1, H), dtype=dt)
    gates = np.zeros((B, T, 4 * H), dtype=dt)
    for t in range(T):
        z = xw[:, t] + hs[:, t] @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        cs[:, t + 1] = f * cs[:, t] + i * gg
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
        gates[:, t] = np.concatenate([i, f, gg, o], axis=-1)
    out = hs[:, 1:].copy()

    def back(g):
        gz_all = np.zeros((B, T, 4 * H), dtype=dt)
        dh = np.zeros((B, H), dtype=dt)
        dc = np.zeros((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            i, f, gg, o = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
            tc = np.tanh(cs[:, t + 1])
            dh = dh + g[:, t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * gg
            dg = dc * i
            df = dc * cs[:, t]
            gz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=-1)
            gz_all[:, t] = gz
            dh = gz @ Wh.T
            dc = dc * f
        gx = gz_all @ Wi.T
        gWi = xd.reshape(B * T, -1).T @ gz_all.reshape(B * T, -1)
        gWh = hs[:, :-1].reshape(B * T, H).T @ gz_all.reshape(B * T, -1)
        gb = gz_all.sum(axis=(0, 1))
        return gx, gWi, gWh, gb

    return _make(out, (x, w_ih, w_hh, bias), back)
