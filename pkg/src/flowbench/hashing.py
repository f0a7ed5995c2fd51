"""Stable 64-bit hash priorities.

All subsampling in the engine (size tiers, split caps, scaler fit samples,
batch shuffling) is driven by per-row priorities computed as an avalanche
hash of a derived key and the row id. Selection by lowest priority is a
pure function of (seed, row_id), so results never depend on iteration
order, platform RNGs, or library versions, and subsets drawn at growing
sizes are nested.

The mixer is the splitmix64 finalizer. Keep this file in sync with any
out-of-process reimplementation (the canonical constants are below).
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN64 = 0x9E3779B97F4A7C15
_MULT_A = 0xBF58476D1CE4E5B9
_MULT_B = 0x94D049BB133111EB

# Purpose tags keep unrelated sampling decisions decorrelated even when the
# user supplies one experiment seed.
PURPOSE_TIER = 1
PURPOSE_TRAIN = 2
PURPOSE_TEST = 3
PURPOSE_VAL = 4
PURPOSE_VAL_SPLIT = 5
PURPOSE_SCALERS = 6
PURPOSE_SHUFFLE = 7
PURPOSE_DRIFT = 8


def mix64(value: int) -> int:
    """splitmix64 finalizer over one 64-bit integer."""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * _MULT_A) & MASK64
    z = ((z ^ (z >> 27)) * _MULT_B) & MASK64
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer parts (purpose tag, seed, epoch, ...) into one 64-bit key."""
    key = GOLDEN64
    for part in parts:
        key = mix64(key ^ ((part + GOLDEN64) & MASK64))
    return key


def priorities(key: int, row_ids: np.ndarray) -> np.ndarray:
    """Vectorized mix64(row_id XOR key) for an array of row ids.

    uint64 arithmetic wraps modulo 2**64 in numpy array ops, which matches
    the scalar reference in mix64 exactly.
    """
    x = np.asarray(row_ids, dtype=np.uint64) ^ np.uint64(key)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MULT_A)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MULT_B)
    return x ^ (x >> np.uint64(31))


def take_lowest(key: int, row_ids: np.ndarray, count: int) -> np.ndarray:
    """The `count` row ids with the lowest hash priority, returned sorted.

    Hash ties (astronomically rare) break by row id, so the result is fully
    deterministic.
    """
    row_ids = np.asarray(row_ids, dtype=np.uint64)
    if count >= len(row_ids):
        return np.sort(row_ids)
    if count <= 0:
        return row_ids[:0]
    prio = priorities(key, row_ids)
    order = np.lexsort((row_ids, prio))
    return np.sort(row_ids[order[:count]])


def shuffle_order(seed: int, epoch: int, row_ids: np.ndarray) -> np.ndarray:
    """Deterministic permutation of row_ids for one epoch.

    Sorts on hash(seed, epoch, row_id); a pure function of its arguments, so
    an epoch can be re-produced or resumed without iterator state.
    """
    row_ids = np.asarray(row_ids, dtype=np.uint64)
    key = derive_key(PURPOSE_SHUFFLE, seed, epoch)
    prio = priorities(key, row_ids)
    order = np.lexsort((row_ids, prio))
    return row_ids[order]
