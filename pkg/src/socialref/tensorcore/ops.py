"""Differentiable primitives.

Every primitive computes its forward value with numpy and attaches a closure
that maps the output gradient to one gradient per input.
"""

from __future__ import annotations

import math

import numpy as np

from socialref.errors import DimensionError
from socialref.tensorcore.tensor import Tensor, as_tensor

NEG_INF = -1e9


def _node(data, parents, backward_fn, op):
    out = Tensor(data)
    out.parents = tuple(parents)
    out.backward_fn = backward_fn
    out.op = op
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    b = as_tensor(b)
    return as_tensor(a, dtype=b.dtype), b


def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a, c):
    def backward(g):
        return (g * c,)

    return _node(a.data * c, (a,), backward, "scale")


def matmul(a, b):
    """(..., n, k) @ (k, m) or (..., n, k) @ (..., k, m) with equal leading dims."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a, shape):
    def backward(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes):
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return _node(a.data.transpose(axes), (a,), backward, "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(data, tensors, backward, "concat")


def getitem(a, key):
    """Basic or integer-array indexing; gradients scatter-add back."""

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _node(a.data[key], (a,), backward, "getitem")


def gather_rows(a, index):
    """Pick ``a[b, index[b]]`` for a (B, L, d) input; returns (B, d)."""
    if a.ndim != 3 or len(index) != a.shape[0]:
        raise DimensionError(f"gather_rows: shape {a.shape} with {len(index)} indices")
    rows = np.arange(a.shape[0])
    return getitem(a, (rows, np.asarray(index)))


def relu(a):
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _node(a.data * mask, (a,), backward, "relu")


def softmax(a, mask=None):
    """Softmax over the last axis; ``mask`` is an additive constant (0 / NEG_INF)."""
    x = a.data if mask is None else a.data + mask
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (a,), backward, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gg = g * gamma.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def embedding(table, ids):
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise DimensionError(f"embedding: ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding: ids out of range for table {table.shape}")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return _node(table.data[ids], (table,), backward, "embedding")


def dropout(x, p, rng, train):
    if not train or p <= 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return _node(x.data * keep, (x,), backward, "dropout")


def sinusoidal_table(length, d, dtype=np.float64):
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def positional_encoding_add(x, start=0):
    """Add sinusoidal encodings for positions start..start+L-1 along axis -2."""
    length, d = x.shape[-2], x.shape[-1]
    pe = sinusoidal_table(start + length, d, x.dtype)[start:]

    def backward(g):
        return (g,)

    return _node(x.data + pe, (x,), backward, "positional_encoding_add")


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under row softmax."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise DimensionError(f"cross_entropy: target index out of range for {logits.shape[1]} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(targets))
    n = len(targets)
    loss = -logp[rows, targets].sum() / n

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / n),)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def sum_all(a):
    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward, "sum")


def mean(a):
    return scale(sum_all(a), 1.0 / a.data.size)


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


def split_heads(x, heads):
    """(B, L, d) -> (B, heads, L, d/heads)."""
    b, length, d = x.shape
    if d % heads:
        raise DimensionError(f"multi_head_attention: width {d} not divisible by {heads} heads")
    return transpose(reshape(x, (b, length, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x):
    b, h, length, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, length, h * dh))


def multi_head_attention(q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, heads, key_mask=None,
                         dropout_p=0.0, rng=None, train=False):
    """Scaled dot-product attention over ``heads`` heads.

    ``key_mask`` is a (B, Lk) boolean array, True for keys that may be attended.
    """
    if q_in.ndim != 3 or kv_in.ndim != 3 or q_in.shape[0] != kv_in.shape[0]:
        raise DimensionError(f"multi_head_attention: inputs {q_in.shape} and {kv_in.shape}")
    d = q_in.shape[-1]
    if wq.shape != (d, d) or wk.shape[0] != kv_in.shape[-1]:
        raise DimensionError(f"multi_head_attention: weights {wq.shape}/{wk.shape} for width {d}")
    q = split_heads(linear(q_in, wq, bq), heads)
    k = split_heads(linear(kv_in, wk, bk), heads)
    v = split_heads(linear(kv_in, wv, bv), heads)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // heads))
    mask = None
    if key_mask is not None:
        mask = np.where(np.asarray(key_mask)[:, None, None, :], 0.0, NEG_INF).astype(q_in.dtype)
    attn = dropout(softmax(scores, mask), dropout_p, rng, train)
    return linear(merge_heads(matmul(attn, v)), wo, bo)
