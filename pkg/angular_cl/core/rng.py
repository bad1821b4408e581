"""
Seeded random streams

Every random draw in the project goes through `make_rng`. The generator is
numpy's Philox-4x64 (a counter-based bit generator) keyed from
`SeedSequence([seed, stream, *extra])`. Both the key derivation and the Philox
stream are fixed algorithms, so a given (seed, stream) pair yields the same
numbers on every platform and numpy release that ships Philox.

Streams separate independent uses of one experiment seed so that, e.g., adding
an extra initialization draw never shifts the batch order.
"""

import numpy as np

# ── Stream ids ────────────────────────────────────────────────

PERMUTATION = 1
ROTATION = 2
SPLIT = 3
INIT = 4
BATCHES = 5
CANDIDATE = 6
EXPANSION = 7
FOLDS = 8


def make_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Return an independent Philox generator for (seed, stream, *extra)."""
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), *(int(e) for e in extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
