"""Counter-based uniforms: every draw is a pure function of (seed, address).

Addresses are tuples of non-negative integers, e.g. (stream, KIND_RETURN, i, t).
Two systems that ask for the same address see the same number, no matter
which other draws were made before, which is what the couplings rely on.
"""
from __future__ import annotations

import numpy as np

KIND_RETURN = 1  # shared Bernoulli return indicator P_it
KIND_DURATION = 2  # usage-duration draw
KIND_TABLE = 3  # random table policies

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    # splitmix64 finalizer
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def uniform(seed: int, *address: int) -> float:
    """A uniform in [0, 1) addressed by ``address`` under ``seed``."""
    h = _mix((seed + _GOLDEN) & _MASK)
    for field in address:
        h = _mix(((h ^ (field & _MASK)) + _GOLDEN) & _MASK)
    return (h >> 11) * 2.0**-53


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniform_array(seed: int, *address) -> np.ndarray:
    """Vectorised :func:`uniform`; address fields broadcast against each other."""
    fields = [np.asarray(f, dtype=np.int64).astype(np.uint64) for f in address]
    shape = np.broadcast_shapes(*(f.shape for f in fields)) if fields else ()
    with np.errstate(over="ignore"):
        h = np.full(shape, _mix((seed + _GOLDEN) & _MASK), dtype=np.uint64)
        for f in fields:
            h = _mix_array((h ^ f) + np.uint64(_GOLDEN))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


class RandomSource:
    """Addressed uniforms for one run: ``stream`` separates Monte Carlo replicates."""

    def __init__(self, seed: int, stream: int = 0) -> None:
        self.seed = int(seed)
        self.stream = int(stream)

    def returns(self, i: int, t: int) -> float:
        return uniform(self.seed, self.stream, KIND_RETURN, i, t)

    def duration(self, i: int, t: int, slot: int) -> float:
        return uniform(self.seed, self.stream, KIND_DURATION, i, t, slot)
