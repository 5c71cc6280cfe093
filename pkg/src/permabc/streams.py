"""Counter-based random streams for reproducible parallel Monte Carlo.

Every random draw in the package flows through a ``numpy.random.Generator``.
Independent substreams are derived from a 64-bit run seed plus an integer
path (e.g. iteration and particle index) via a Philox counter-based
generator, so the stream assigned to a unit of work depends only on its
index, never on scheduling order or thread count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(h: int, x: int) -> int:
    # splitmix64 finalizer; decorrelates structured integer paths
    h = (h ^ (x & _MASK64)) * 0xBF58476D1CE4E5B9 & _MASK64
    h = (h ^ (h >> 27)) * 0x94D049BB133111EB & _MASK64
    return h ^ (h >> 31)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the substream at ``path`` under ``seed``.

    Parameters
    ----------
    seed : int
        Run-level seed (any Python int; folded to 64 bits).
    *path : int
        Integer coordinates identifying the unit of work, e.g.
        ``substream(seed, iteration, particle_index)``.

    Returns
    -------
    numpy.random.Generator
        Philox-backed generator, independent across distinct paths.
    """
    key = seed & _MASK64
    folded = 0x9E3779B97F4A7C15
    for x in path:
        folded = _mix(folded, int(x))
    bitgen = np.random.Philox(key=np.array([key, folded], dtype=np.uint64))
    return np.random.Generator(bitgen)


def root_stream(seed: int) -> np.random.Generator:
    """Generator for single-threaded top-level draws of a run."""
    return substream(seed)
