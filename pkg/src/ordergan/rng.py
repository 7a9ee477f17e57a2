"""Seeded random streams: xoshiro256** state filled from splitmix64 of the user seed."""

from __future__ import annotations

import hashlib

import numpy as np
from randomgen import Xoshiro256

_MASK = (1 << 64) - 1


def splitmix64(x: int):
    """Return ``(next_state, output)`` of one splitmix64 step."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def derive_seed(seed: int, *labels) -> int:
    """Mix a master seed with stream labels into a new 64-bit seed."""
    state = int(seed) & _MASK
    state, out = splitmix64(state)
    for label in labels:
        if isinstance(label, str):
            value = int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")
        else:
            value = int(label)
        state, out = splitmix64((out ^ (value & _MASK)) & _MASK)
    return out


def make_rng(seed: int, *labels) -> np.random.Generator:
    """A ``numpy`` Generator over xoshiro256**, seeded deterministically.

    Distinct ``labels`` give independent streams from the same master seed.
    """
    state = derive_seed(seed, *labels) if labels else int(seed) & _MASK
    words = []
    for _ in range(4):
        state, out = splitmix64(state)
        words.append(out)
    bitgen = Xoshiro256(0)
    st = bitgen.state
    st["s"] = np.array(words, dtype=np.uint64)
    st["has_uint32"] = 0
    st["uinteger"] = 0
    bitgen.state = st
    return np.random.Generator(bitgen)
