"""Counter-based random streams usable inside numba kernels.

Each stream is a splitmix64 sequence whose starting state is derived from a run
seed and a key, so streams can be consumed in any order or in parallel.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np
from numba import njit, uint64

_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def splitmix64(x):
    z = x + uint64(_GOLDEN)
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True)
def derive_state(seed, a, b):
    return splitmix64(splitmix64(splitmix64(uint64(seed)) ^ uint64(a)) ^ uint64(b))


@njit(cache=True)
def next_uniform(state):
    """Advance ``state`` and return (new_state, u) with u uniform in [0, 1)."""
    state = state + uint64(_GOLDEN)
    z = state
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    z = z ^ (z >> uint64(31))
    return state, (z >> uint64(11)) * _INV_2_53


def seed64(seed: int) -> np.uint64:
    return np.uint64(int(seed) % (1 << 64))


def sub_seed(seed: int, tag: str) -> int:
    """Independent child seed for a named pipeline stage."""
    digest = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def stable_hash(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@njit(cache=True)
def build_alias(probs):
    """Vose alias table for a normalised probability vector."""
    n = probs.shape[0]
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int64)
    scaled = probs * n
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        g = large[nl]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        if scaled[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    for i in range(nl):
        prob[large[i]] = 1.0
        alias[large[i]] = large[i]
    for i in range(ns):
        prob[small[i]] = 1.0
        alias[small[i]] = small[i]
    return prob, alias


@njit(cache=True)
def alias_draw(prob, alias, offset, size, u):
    """Sample from the alias table slice [offset, offset+size) using one uniform."""
    x = u * size
    k = np.int64(x)
    if k >= size:
        k = size - 1
    if x - k < prob[offset + k]:
        return k
    return alias[offset + k]
