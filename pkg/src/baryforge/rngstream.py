"""Deterministic random-stream derivation.

Every random draw in the package flows from a single integer seed through
named child streams, so any component (training, sampling, evaluation,
individual Langevin chains) can be reproduced in isolation.  Stream names
are mapped to fixed integers; a child stream is fully determined by the
tuple (seed, domain, *indices).
"""

from __future__ import annotations

import numpy as np

# Fixed domain tags.  Never renumber: checkpointed runs depend on them.
TRAIN_XBATCH = 1
TRAIN_ULA = 2
TRAIN_PROPOSAL = 3
SAMPLE = 4
EVAL = 5
DATA = 6


def child_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    """SeedSequence for the child stream addressed by (seed, *key)."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the child stream addressed by (seed, *key)."""
    return np.random.default_rng(child_sequence(seed, *key))


def chain_rngs(seed: int, n_chains: int, *key: int) -> list[np.random.Generator]:
    """One independent generator per chain, derived from (seed, *key, chain index)."""
    base = tuple(int(k) for k in key)
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=base + (i,)))
        for i in range(n_chains)
    ]
