"""Deterministic per-stream seeds from a master seed and an index tuple.

derive = mix(mix(mix(mix(master) ^ point) ^ sample) ^ agent), where mix is
the splitmix64 finalizer. Every stage is a bijection on 64-bit words, so a
different master seed changes every derived seed.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "splitmix64 counter hash (in-kernel) + numpy PCG64 via SeedSequence"

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seeds(master: int, point, sample, agent=0) -> np.ndarray:
    """Vectorised form of `derive_seed`; index arguments broadcast."""
    with np.errstate(over="ignore"):
        z = _mix(np.full(1, master % 2**64, dtype=np.uint64))
        for idx in (point, sample, agent):
            z = _mix(z ^ np.asarray(idx, dtype=np.int64).astype(np.uint64))
    return z


def derive_seed(master: int, point: int, sample: int, agent: int = 0) -> int:
    return int(derive_seeds(master, point, sample, agent)[0])
