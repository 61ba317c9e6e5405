"""Deterministic random-stream derivation for parallel replicas.

Every stochastic component draws from a ``numpy.random.Generator`` built
here.  A (master seed, stream, index) triple maps to an independent
PCG64 stream through ``numpy.random.SeedSequence`` spawn keys, so replica
k produces identical output whether it runs serially, in a worker pool,
or in a re-execution from a manifest.  The rule is part of the
reproducibility contract and is recorded verbatim in run manifests.
"""

from __future__ import annotations

import numpy as np

# Stream tags.  Each independent consumer of randomness gets its own tag
# so adding draws to one stage never shifts another stage's stream.
STREAM_SIMULATE = 1
STREAM_LIMIT_DRAWS = 2
STREAM_PROJECTIONS = 3

SEED_RULE = (
    "numpy.random.SeedSequence(entropy=master_seed, spawn_key=(stream, index))"
    " -> PCG64; streams: simulate=1, limit_draws=2, projections=3"
)

_UINT64_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    """Validate and return a master seed as a plain int in [0, 2^64)."""
    seed = int(seed)
    if not 0 <= seed <= _UINT64_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def spawn_generator(master_seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Build the Generator for (master_seed, stream, index).

    The same triple always yields the same stream; distinct triples yield
    statistically independent streams.
    """
    ss = np.random.SeedSequence(
        entropy=check_seed(master_seed), spawn_key=(int(stream), int(index))
    )
    return np.random.Generator(np.random.PCG64(ss))


def seed_words(master_seed: int, stream: int, index: int = 0) -> list[int]:
    """Four 32-bit words summarizing the derived stream, for manifests."""
    ss = np.random.SeedSequence(
        entropy=check_seed(master_seed), spawn_key=(int(stream), int(index))
    )
    return [int(w) for w in ss.generate_state(4)]
