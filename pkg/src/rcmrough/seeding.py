"""Reproducible sub-stream seeds for parallel Monte Carlo.

A stream seed is derived from ``(master_seed, stream_index)`` with the
SplitMix64 finalizer::

    z = (master_seed + (stream_index + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z =  z ^ (z >> 31)

The result seeds a ``numpy.random.Generator`` (PCG64).  The mapping is fixed;
changing it changes every derived stream and therefore every Monte Carlo
result, so treat it as part of the file formats.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# stream index offsets so that different consumers of one master seed never collide
WALK_STREAMS = 0
ENV_STREAMS = 1 << 40
SIM_STREAMS = 1 << 41


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_seed(master_seed: int, stream_index: int) -> int:
    """64-bit seed of sub-stream ``stream_index`` under ``master_seed``."""
    check_seed(master_seed)
    if stream_index < 0:
        raise ValueError("stream_index must be nonnegative")
    return splitmix64(master_seed + (stream_index + 1) * GOLDEN_GAMMA)


def check_seed(seed: int, name: str = "seed") -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.default_rng(check_seed(seed))
