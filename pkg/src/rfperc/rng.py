"""Counter-based random-number streams.

Every random draw in the package is attributed to a (seed, stream-id) pair
fed into a Philox generator, so a seed plus the documented stream layout
fully determines teacher, features, patterns, test patterns and each
solver run, independently of call order elsewhere in the program.

Stream-id layout (64 bits): the high 16 bits select a domain, the low 48
are free for run / cell / sample indices.
"""

from __future__ import annotations

import numpy as np

_DOMAIN_SHIFT = 48

#: Instance-generation streams.
STREAM_TEACHER = 0
STREAM_FEATURES = 1
STREAM_PATTERNS = 2
STREAM_TEST_PATTERNS = 3

#: Domain tags for derived streams.
DOMAIN_SOLVER = 1 << _DOMAIN_SHIFT
DOMAIN_PERTURB = 2 << _DOMAIN_SHIFT
DOMAIN_EXPERIMENT = 3 << _DOMAIN_SHIFT

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Generator for the given (seed, stream-id) pair."""
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def solver_stream(seed: int, run_id: int = 0) -> np.random.Generator:
    """Stream owned by one solver run."""
    return stream(seed, DOMAIN_SOLVER | (run_id & ((1 << _DOMAIN_SHIFT) - 1)))


def perturbation_stream(seed: int, run_id: int = 0) -> np.random.Generator:
    """Stream for weight-perturbation experiments (local energy)."""
    return stream(seed, DOMAIN_PERTURB | (run_id & ((1 << _DOMAIN_SHIFT) - 1)))


def derive_seed(master_seed: int, *indices: int) -> int:
    """Deterministic child seed for experiment cells/samples/runs.

    Each index must fit in 12 bits (< 4096); up to four indices are packed
    into the experiment stream id.
    """
    if len(indices) > 4:
        raise ValueError("at most four indices can be packed")
    packed = 0
    for idx in indices:
        if not 0 <= idx < (1 << 12):
            raise ValueError(f"index {idx} out of range for seed derivation")
        packed = (packed << 12) | idx
    g = stream(master_seed, DOMAIN_EXPERIMENT | packed)
    return int(g.integers(0, 1 << 63, dtype=np.uint64))
