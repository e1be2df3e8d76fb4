"""Counter-based random streams.

Every stream is a Philox-4x64 generator keyed by a ``SeedSequence`` built
from the master seed and a spawn path, e.g. ``(replicate, purpose)``.
Distinct paths give statistically independent streams, and a stream's
output depends only on (master seed, path) so results do not depend on
worker scheduling.
"""
from __future__ import annotations

import numpy as np

# Purpose tags used as the last element of a spawn path.
DATA = 0
ASSIGN, RESPONSE, STAGE2, OUTCOME = 1, 2, 3, 4
SAMPLER = 10
GFORMULA = 11


def seed_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(p) for p in path))


def stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path: int) -> int:
    """A 64-bit integer seed for the sub-stream at ``path``."""
    return int(seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0])
