from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Order-independent child seed for the stream labelled by ``keys``.

    Hashes ``(seed, keys)`` through :class:`numpy.random.SeedSequence`, so a
    stream depends only on its label and never on how many other streams were
    drawn before it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))
