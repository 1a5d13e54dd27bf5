"""Deterministic RNG derivation.

All stochastic operations take an explicit generator. Generators are
Philox-based (counter RNG, bit-reproducible across platforms) and child
seeds are derived from a 64-bit root seed plus a string/int key path, so
any part of a run can be recomputed in isolation.
"""

import hashlib

import numpy as np


def _key_to_ints(key) -> list[int]:
    if isinstance(key, (int, np.integer)):
        return [int(key) & 0xFFFFFFFF]
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    raise TypeError(f"seed key must be int or str, got {type(key).__name__}")


def child_seed(root_seed: int, *keys) -> int:
    """Derive a stable 64-bit child seed from a root seed and a key path."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.extend(_key_to_ints(key))
    seq = np.random.SeedSequence(entropy)
    return int(seq.generate_state(1, np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn_rng(root_seed: int, *keys) -> np.random.Generator:
    """Generator seeded by ``child_seed(root_seed, *keys)``."""
    return make_rng(child_seed(root_seed, *keys))
