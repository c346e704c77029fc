"""Splittable seeding: every random stream derives from one root seed.

Streams are keyed by ``(root_seed, purpose, index)`` through numpy's
``SeedSequence`` spawn keys and drive the counter-based ``Philox`` bit
generator, so stream ``i`` never depends on how many other streams were drawn
or in which order episodes are evaluated.
"""

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    """Stable 32-bit key for a stream purpose label."""
    return zlib.crc32(purpose.encode("utf-8"))


def seed_sequence(root_seed: int, purpose: str, index: int = 0) -> np.random.SeedSequence:
    """Return the seed sequence for stream *index* of *purpose* under *root_seed*."""
    if root_seed < 0:
        raise ValueError(f"seed must be non-negative, got {root_seed}")
    return np.random.SeedSequence(entropy=root_seed, spawn_key=(_purpose_key(purpose), index))


def derive_seed(root_seed: int, purpose: str, index: int = 0) -> int:
    """Derive a 63-bit integer seed, e.g. the ``seed`` recorded in an episode."""
    state = seed_sequence(root_seed, purpose, index).generate_state(1, dtype=np.uint64)[0]
    return int(state) >> 1


def make_rng(root_seed: int, purpose: str = "root", index: int = 0) -> np.random.Generator:
    """Build a ``Generator`` on a Philox stream for ``(root_seed, purpose, index)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(root_seed, purpose, index)))
