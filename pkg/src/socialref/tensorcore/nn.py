"""Parameter store and the layer blocks built from the primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from socialref.errors import ConfigError, DimensionError
from socialref.tensorcore import ops
from socialref.tensorcore.tensor import Tensor


class ParamStore:
    """Name -> trainable Tensor, plus Adam moment buffers and a step counter."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=self.dtype)
        self.params[name] = Tensor(arr, requires_grad=True, name=name)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def count(self):
        return sum(p.data.size for p in self.params.values())

    def snapshot(self):
        """Immutable copy of the current values (safe to hand to another thread)."""
        out = {}
        for name, p in self.params.items():
            arr = p.data.copy()
            arr.setflags(write=False)
            out[name] = arr
        return out

    def load_values(self, values):
        for name, arr in values.items():
            if name not in self.params:
                raise DimensionError(f"unknown parameter {name!r}")
            cur = self.params[name]
            if cur.shape != tuple(arr.shape):
                raise DimensionError(f"parameter {name!r}: shape {arr.shape} != {cur.shape}")
            cur.data = np.array(arr, dtype=self.dtype)


def init_linear(store, name, fan_in, fan_out, rng, gain=1.0):
    """Weights U(+-gain*sqrt(1/fan_in)), bias U(+-sqrt(1/fan_in))."""
    bound = math.sqrt(1.0 / fan_in)
    store.add(f"{name}.weight", rng.uniform(-gain * bound, gain * bound, size=(fan_in, fan_out)))
    store.add(f"{name}.bias", rng.uniform(-bound, bound, size=(fan_out,)))


def linear(store, name, x):
    return ops.linear(x, store[f"{name}.weight"], store[f"{name}.bias"])


def init_embedding(store, name, rows, width, rng):
    store.add(name, rng.normal(0.0, 0.02, size=(rows, width)))


RELU_GAIN = math.sqrt(6.0)


def init_mlp(store, name, sizes, rng, gain=1.0):
    """``gain=RELU_GAIN`` keeps activation variance through deep ReLU stacks."""
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{name}.{i}", a, b, rng, gain)


def mlp(store, name, x, layers):
    """FC layers with ReLU between them (none after the last)."""
    for i in range(layers):
        x = linear(store, f"{name}.{i}", x)
        if i < layers - 1:
            x = ops.relu(x)
    return x


def init_layer_norm(store, name, width):
    store.add(f"{name}.gamma", np.ones(width))
    store.add(f"{name}.beta", np.zeros(width))


def layer_norm(store, name, x):
    return ops.layer_norm(x, store[f"{name}.gamma"], store[f"{name}.beta"])


@dataclass(frozen=True)
class EncoderShape:
    layers: int
    width: int
    ffn: int
    heads: int

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by {self.heads} heads")


def init_transformer(store, name, shape: EncoderShape, rng):
    d = shape.width
    for i in range(shape.layers):
        p = f"{name}.{i}"
        for proj in ("q", "k", "v", "o"):
            init_linear(store, f"{p}.attn.{proj}", d, d, rng)
        init_layer_norm(store, f"{p}.norm1", d)
        init_linear(store, f"{p}.ffn.0", d, shape.ffn, rng)
        init_linear(store, f"{p}.ffn.1", shape.ffn, d, rng)
        init_layer_norm(store, f"{p}.norm2", d)


def transformer(store, name, x, shape: EncoderShape, key_mask=None, dropout=0.0, rng=None,
                train=False):
    """Post-norm encoder stack: x = LN(x + MHA(x)); x = LN(x + FFN(x))."""
    if x.shape[-1] != shape.width:
        raise DimensionError(f"{name}: input width {x.shape[-1]} != model width {shape.width}")
    for i in range(shape.layers):
        p = f"{name}.{i}"
        attn = ops.multi_head_attention(
            x, x,
            store[f"{p}.attn.q.weight"], store[f"{p}.attn.q.bias"],
            store[f"{p}.attn.k.weight"], store[f"{p}.attn.k.bias"],
            store[f"{p}.attn.v.weight"], store[f"{p}.attn.v.bias"],
            store[f"{p}.attn.o.weight"], store[f"{p}.attn.o.bias"],
            shape.heads, key_mask=key_mask,
        )
        x = layer_norm(store, f"{p}.norm1", ops.add(x, ops.dropout(attn, dropout, rng, train)))
        h = linear(store, f"{p}.ffn.1", ops.relu(linear(store, f"{p}.ffn.0", x)))
        x = layer_norm(store, f"{p}.norm2", ops.add(x, ops.dropout(h, dropout, rng, train)))
    return x
