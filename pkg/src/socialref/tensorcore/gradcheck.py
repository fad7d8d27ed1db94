"""Central finite-difference oracles for every primitive."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from socialref.tensorcore import ops
from socialref.tensorcore.tensor import Tensor

H = 1e-5
PRIMITIVE_TOL = 1e-4


def rel_error(a, b, floor=1e-12):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(fn, x, h=H, coords=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of array ``x`` (mutated in place)."""
    flat = x.flat  # writes through even for non-contiguous views
    idx = range(x.size) if coords is None else coords
    out = np.zeros(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        out[j] = (fp - fm) / (2 * h)
    return out


def check(build, inputs, rng, h=H):
    """Compare backprop with finite differences for ``build(*tensors) -> Tensor``.

    The output is contracted with a fixed random tensor so every output entry
    contributes. Returns the relative error over all input gradients stacked
    into one vector (inputs whose true gradient is zero, such as a key bias
    under softmax, would make a per-input ratio meaningless).
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    out = build(*tensors)
    weights = rng.standard_normal(out.shape)

    def scalar():
        return float((build(*tensors).data * weights).sum())

    loss = ops.sum_all(ops.mul(out, weights))
    loss.backward()
    analytic, numeric = [], []
    for t in tensors:
        analytic.append(np.zeros(t.data.size) if t.grad is None else t.grad.ravel())
        numeric.append(numeric_grad(scalar, t.data, h))
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _mha_case(rng):
    b, lq, lk, d, heads = 2, 3, 4, 8, 2
    key_mask = np.ones((b, lk), dtype=bool)
    key_mask[1, -1] = False
    arrays = [rng.standard_normal((b, lq, d)), rng.standard_normal((b, lk, d))]
    for _ in range(4):
        arrays += [rng.standard_normal((d, d)) * 0.4, rng.standard_normal(d) * 0.1]

    def build(q, kv, wq, bq, wk, bk, wv, bv, wo, bo):
        return ops.multi_head_attention(q, kv, wq, bq, wk, bk, wv, bv, wo, bo, heads,
                                        key_mask=key_mask)

    return build, arrays


def _cases():
    """name -> factory(rng) returning (build, inputs)."""

    def matmul(rng):
        return (lambda a, b: ops.matmul(a, b)), [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))]

    def batched_matmul(rng):
        return (lambda a, b: ops.matmul(a, b)), [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))]

    def add(rng):
        return (lambda a, b: ops.add(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal(4)]

    def concat(rng):
        return (lambda a, b: ops.concat([a, b], axis=1)), [rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 1, 2))]

    def relu(rng):
        return (lambda a: ops.relu(a)), [_away_from_zero(rng, (3, 5))]

    def softmax(rng):
        mask = np.zeros((3, 5))
        mask[0, 4] = ops.NEG_INF
        return (lambda a: ops.softmax(a, mask)), [rng.standard_normal((3, 5))]

    def layer_norm(rng):
        return (lambda x, g, b: ops.layer_norm(x, g, b)), [
            rng.standard_normal((2, 3, 6)), rng.standard_normal(6), rng.standard_normal(6)]

    def embedding_lookup(rng):
        ids = rng.integers(0, 5, size=(2, 3))
        return (lambda t: ops.embedding(t, ids)), [rng.standard_normal((5, 4))]

    def dropout(rng):
        seed = int(rng.integers(1 << 31))
        return (lambda a: ops.dropout(a, 0.3, np.random.default_rng(seed), True)), [rng.standard_normal((4, 6))]

    def multi_head_attention(rng):
        return _mha_case(rng)

    def positional_encoding_add(rng):
        return (lambda a: ops.positional_encoding_add(a, start=1)), [rng.standard_normal((2, 4, 6))]

    def cross_entropy(rng):
        targets = rng.integers(0, 5, size=4)
        return (lambda z: ops.cross_entropy(z, targets)), [rng.standard_normal((4, 5)) * 2]

    def getitem(rng):
        idx = rng.integers(0, 4, size=3)
        return (lambda a: ops.gather_rows(a, idx)), [rng.standard_normal((3, 4, 2))]

    def reshape_transpose(rng):
        return (lambda a: ops.transpose(ops.reshape(a, (2, 3, 2)), (1, 0, 2))), [rng.standard_normal((3, 4))]

    def mul(rng):
        return (lambda a, b: ops.mul(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))]

    return {
        "matmul": matmul,
        "batched_matmul": batched_matmul,
        "add": add,
        "mul": mul,
        "concat": concat,
        "relu": relu,
        "softmax": softmax,
        "layer_norm": layer_norm,
        "embedding_lookup": embedding_lookup,
        "dropout": dropout,
        "multi_head_attention": multi_head_attention,
        "positional_encoding_add": positional_encoding_add,
        "cross_entropy": cross_entropy,
        "getitem": getitem,
        "reshape_transpose": reshape_transpose,
    }


PRIMITIVES = tuple(_cases())


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)


def check_primitives(seed=0, instances=10, tol=PRIMITIVE_TOL, names=None):
    results = []
    cases = _cases()
    for name in names or cases:
        rng = np.random.default_rng([seed, len(name)] + [ord(c) for c in name])
        worst = 0.0
        for _ in range(instances):
            build, inputs = cases[name](rng)
            try:
                worst = max(worst, check(build, inputs, rng))
            except Exception:
                worst = float("inf")
                break
        results.append(CheckResult(name, worst, tol))
    return results
