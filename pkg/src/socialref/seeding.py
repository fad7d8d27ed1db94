"""Named random streams derived from one run seed."""

import hashlib

import numpy as np


def stream(seed, *names):
    """Independent RNG per (seed, name...) so consumers never perturb each other."""
    digest = hashlib.sha256("/".join(map(str, (seed,) + names)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))
