"""Layers built on the autograd core: attention, transformer blocks, LSTM and graph convolutions."""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=ag.get_default_dtype()), requires_grad=True, name=name)


class Module:
    """Parameter container; sub-modules and parameters are found from attributes
    (in assignment order), including lists of modules."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, p in params.items():
            if p.data.shape != state[n].shape:
                raise ValueError(f"shape mismatch for {n}: {p.data.shape} vs {state[n].shape}")
            p.data = np.array(state[n], dtype=p.data.dtype)


# -- initialization -------------------------------------------------------------

def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def normal(rng: np.random.Generator, shape, std: float = 0.02):
    return rng.normal(0.0, std, size=shape)


# -- building blocks ------------------------------------------------------------

class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        self.weight = Parameter(fan_in_uniform(rng, n_in, (n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Linear expects last dim {self.n_in}, got {x.shape[-1]}")
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, rng, n: int, dim: int, std: float = 0.02):
        self.weight = Parameter(normal(rng, (n, dim), std))

    def forward(self, ids):
        return ag.take(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


def sinusoid(positions, dim: int) -> np.ndarray:
    """Rows ``[sin(D/10000^(2i/d)), cos(D/10000^(2i/d)), ...]`` for each position D."""
    positions = np.asarray(positions, dtype=np.float64)
    i = np.arange(0, dim, 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, i / dim)
    angles = positions[..., None] * freq
    out = np.zeros(positions.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles[..., : dim // 2])
    return out


# -- attention ------------------------------------------------------------------

class AttentionCounter:
    """Counts query-key score pairs computed by :class:`MultiHeadAttention`."""

    def __init__(self):
        self.pairs = 0
        self.by_tag: dict[str, int] = {}

    def add(self, tag, n):
        self.pairs += n
        self.by_tag[tag] = self.by_tag.get(tag, 0) + n


_counters: list[AttentionCounter] = []


@contextlib.contextmanager
def count_attention():
    counter = AttentionCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` heads with output projection.

    ``mask`` is boolean, broadcastable to [B, Lq, Lk]; False means "do not
    attend".  A query row with no visible key receives zero attention output
    before the output projection.
    """

    def __init__(self, rng, dim: int, heads: int, tag: str = "attn"):
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.o = Linear(rng, dim, dim)
        self.dim, self.heads, self.tag = dim, heads, tag
        self.last_weights = None

    def _split(self, x):
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, query, keys, values, mask=None):
        if query.ndim != 3 or keys.ndim != 3 or values.ndim != 3:
            raise ValueError("attention inputs must be [batch, length, dim]")
        if keys.shape[:2] != values.shape[:2]:
            raise ValueError(f"keys {keys.shape} and values {values.shape} differ in length")
        if query.shape[-1] != self.dim or keys.shape[-1] != self.dim:
            raise ValueError(f"attention dim mismatch: expected {self.dim}")
        B, Lq, _ = query.shape
        Lk = keys.shape[1]
        for c in _counters:
            c.add(self.tag, B * self.heads * Lq * Lk)
        q = self._split(self.q(query))
        k = self._split(self.k(keys))
        v = self._split(self.v(values))
        scores = ag.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.dim // self.heads))
        m = None
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            if m.ndim == 2:
                m = m[None]
            m = m[:, None]
        w = ag.softmax(scores, axis=-1, mask=m)
        self.last_weights = w.data
        ctx = ag.matmul(w, v).transpose(0, 2, 1, 3).reshape(B, Lq, self.dim)
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.l1 = Linear(rng, dim, hidden)
        self.l2 = Linear(rng, hidden, dim)

    def forward(self, x):
        return self.l2(ag.relu(self.l1(x)))


class TransformerEncoderLayer(Module):
    """Post-norm self-attention block."""

    def __init__(self, rng, dim: int, heads: int, ff: int):
        self.attn = MultiHeadAttention(rng, dim, heads, tag="encoder")
        self.norm1 = LayerNorm(dim)
        self.ff = FeedForward(rng, dim, ff)
        self.norm2 = LayerNorm(dim)

    def forward(self, x, pad_mask=None):
        mask = None if pad_mask is None else pad_mask[:, None, :]
        x = self.norm1(x + self.attn(x, x, x, mask))
        return self.norm2(x + self.ff(x))


class TransformerDecoderLayer(Module):
    def __init__(self, rng, dim: int, heads: int, ff: int):
        self.self_attn = MultiHeadAttention(rng, dim, heads, tag="decoder_self")
        self.norm1 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(rng, dim, heads, tag="decoder_cross")
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(rng, dim, ff)
        self.norm3 = LayerNorm(dim)

    def forward(self, y, memory, self_mask=None, memory_mask=None):
        y = self.norm1(y + self.self_attn(y, y, y, self_mask))
        mm = None if memory_mask is None else memory_mask[:, None, :]
        y = self.norm2(y + self.cross_attn(y, memory, memory, mm))
        return self.norm3(y + self.ff(y))


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


class LSTM(Module):
    def __init__(self, rng, n_in: int, hidden: int):
        self.w_ih = Parameter(fan_in_uniform(rng, hidden, (n_in, 4 * hidden)))
        self.w_hh = Parameter(fan_in_uniform(rng, hidden, (hidden, 4 * hidden)))
        self.bias = Parameter(np.zeros(4 * hidden))
        self.hidden = hidden

    def forward(self, x):
        """x: [B, T, in] -> hidden states [B, T, hidden]."""
        if x.ndim == 2:
            return ag.lstm_sequence(x.reshape(1, *x.shape), self.w_ih, self.w_hh, self.bias).reshape(
                x.shape[0], self.hidden)
        return ag.lstm_sequence(x, self.w_ih, self.w_hh, self.bias)


# -- graph layers -----------------------------------------------------------------

def _edge_arrays(edges, n_nodes):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise IndexError("edge index out of range")
    return edges[:, 0], edges[:, 1]


class TransformerConv(Module):
    """Graph transformer convolution with edge features and a gated root term.

    For node i with in-neighbours j (edge j -> i carrying feature e_ij)::

        a_ij = softmax_j( (Wq x_i) . (Wk x_j + We e_ij) / sqrt(c) )
        m_i  = sum_j a_ij (Wv x_j + We e_ij)
        r_i  = Wr x_i
        b_i  = sigmoid(w . [m_i, r_i, m_i - r_i])
        out  = b_i r_i + (1 - b_i) m_i

    computed per head (head width c) and concatenated.
    """

    def __init__(self, rng, dim: int, heads: int = 1, gated: bool = True):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.e = Linear(rng, dim, dim, bias=False)
        self.root = Linear(rng, dim, dim)
        self.gate = Linear(rng, 3 * dim, 1, bias=False) if gated else None
        self.dim, self.heads = dim, heads

    def forward(self, x, edges, edge_feats=None):
        N = x.shape[0]
        H, c = self.heads, self.dim // self.heads
        src, dst = _edge_arrays(edges, N)
        r = self.root(x)
        if len(src) == 0:
            m = ag.Tensor(np.zeros((N, self.dim), dtype=x.dtype))
        else:
            q = self.q(x).reshape(N, H, c)
            k = ag.take(self.k(x), src)
            v = ag.take(self.v(x), src)
            if edge_feats is not None:
                ef = self.e(edge_feats)
                k = k + ef
                v = v + ef
            E = len(src)
            k = k.reshape(E, H, c)
            v = v.reshape(E, H, c)
            score = (ag.take(q, dst) * k).sum(axis=-1) * (1.0 / math.sqrt(c))  # [E, H]
            alpha = ag.segment_softmax(score, dst, N)
            m = ag.scatter_add(alpha.reshape(E, H, 1) * v, dst, N).reshape(N, self.dim)
        if self.gate is None:
            return r + m
        beta = ag.sigmoid(self.gate(ag.concat([m, r, m - r], axis=-1)))
        return beta * r + (1.0 - beta) * m


class GATLayer(Module):
    """Additive graph attention (single or multi-head, heads concatenated).

    e_ij = LeakyReLU(a_dst . W x_i + a_src . W x_j) over in-neighbours j of i,
    weights normalized per destination; optional self loops.
    """

    def __init__(self, rng, n_in: int, n_out: int, heads: int = 1, self_loops: bool = True,
                 negative_slope: float = 0.2):
        if n_out % heads:
            raise ValueError("n_out must be divisible by heads")
        self.w = Linear(rng, n_in, n_out, bias=False)
        c = n_out // heads
        self.a_src = Parameter(fan_in_uniform(rng, c, (heads, c)))
        self.a_dst = Parameter(fan_in_uniform(rng, c, (heads, c)))
        self.bias = Parameter(np.zeros(n_out))
        self.heads, self.n_out, self.self_loops, self.slope = heads, n_out, self_loops, negative_slope

    def forward(self, x, edges):
        N = x.shape[0]
        H, c = self.heads, self.n_out // self.heads
        src, dst = _edge_arrays(edges, N)
        if self.self_loops:
            loops = np.arange(N)
            src, dst = np.concatenate([src, loops]), np.concatenate([dst, loops])
        z = self.w(x).reshape(N, H, c)
        if len(src) == 0:
            return ag.Tensor(np.zeros((N, self.n_out), dtype=x.dtype)) + self.bias
        s_src = (z * self.a_src).sum(axis=-1)  # [N, H]
        s_dst = (z * self.a_dst).sum(axis=-1)
        e = ag.leaky_relu(ag.take(s_src, src) + ag.take(s_dst, dst), self.slope)
        alpha = ag.segment_softmax(e, dst, N)
        msg = ag.take(z, src) * alpha.reshape(len(src), H, 1)
        return ag.scatter_add(msg, dst, N).reshape(N, self.n_out) + self.bias
