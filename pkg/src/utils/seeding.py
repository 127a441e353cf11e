"""
Deterministic sub-seed derivation from the single --seed value.
"""

from typing import Sequence

import numpy as np

# stable keys; appending new entries never shifts existing sub-seeds
STREAMS = ('lstm_init', 'lstm_batches', 'attacks')
FEATURE_KEYS = ('packets', 'ip_pairs', 'port_pairs')


def sub_seed(seed: int, stream: str, feature: str = None) -> int:
    """
    32-bit seed for one named consumer of randomness.

    The (stream, feature) pair selects a child of SeedSequence(seed), so
    two consumers never share a random stream and the mapping is stable
    across runs and platforms.
    """
    if stream not in STREAMS:
        raise KeyError(f"unknown random stream: {stream}")
    key = [STREAMS.index(stream)]
    if feature is not None:
        key.append(FEATURE_KEYS.index(feature))
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def spawn_seeds(seed: int, count: int) -> Sequence[int]:
    """Independent seeds for `count` repetitions of one experiment."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
