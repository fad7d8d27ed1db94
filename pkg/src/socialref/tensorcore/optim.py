"""Adam with per-prefix learning rates."""

from __future__ import annotations

import numpy as np

from socialref.errors import NumericError


def lr_for(name, lr_map, default=None):
    """Longest matching prefix in ``lr_map`` wins; ``""`` acts as a catch-all."""
    best, best_len = default, -1
    for prefix, lr in lr_map.items():
        if name.startswith(prefix) and len(prefix) > best_len:
            best, best_len = lr, len(prefix)
    if best is None:
        raise KeyError(f"no learning rate for parameter {name!r}")
    return best


def adam_step(store, lr_map, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every parameter in ``store``."""
    for name, p in store.items():
        if p.grad is None:
            raise NumericError(f"missing gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        lr = lr_for(name, lr_map)
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = p.data - update.astype(p.data.dtype, copy=False)
    return store
