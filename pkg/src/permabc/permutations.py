"""Derangement combinatorics and the stratified permutation proposal.

The proposal used by the stratified rejection sampler draws a permutation
near a base (optimal) matching: an auxiliary count ``N ~ 1 + Poisson(rate)``
truncated to ``{1..K}`` selects how many positions to move; ``N = 1``
returns the base itself and ``N = n >= 2`` draws uniformly from the set of
permutations at Hamming distance exactly ``n`` from the base (a uniform
n-subset deranged in place). The mass function is available in closed form,
which is what the importance-sampling weights require.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Matching
from .validation import check_positive, check_rng


def subfactorial(n: int) -> int:
    """Number of derangements of ``n`` elements (exact integer)."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if n == 0:
        return 1
    if n == 1:
        return 0
    prev2, prev1 = 1, 0  # !0, !1
    for m in range(2, n + 1):
        prev2, prev1 = prev1, (m - 1) * (prev1 + prev2)
    return prev1


def partial_derangement_count(k: int, n: int) -> int:
    """Number of permutations of ``k`` elements moving exactly ``n`` of them."""
    if not 0 <= n <= k:
        raise ValueError(f"n must lie in [0, {k}], got {n}")
    return math.comb(k, n) * subfactorial(n)


def random_derangement(n: int, rng) -> np.ndarray:
    """Uniform fixed-point-free permutation of ``range(n)`` by rejection."""
    if n < 2:
        raise ValueError("derangements need n >= 2")
    rng = check_rng(rng)
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def sample_from_stratum(k: int, n: int, base: Matching, rng) -> Matching:
    """Uniform matching at Hamming distance exactly ``n`` from ``base``.

    ``n`` must be 0 or at least 2; no permutation differs from another in
    exactly one position.
    """
    if n == 1:
        raise ValueError("no permutation lies at Hamming distance 1 (empty stratum)")
    if not 0 <= n <= k:
        raise ValueError(f"n must lie in [0, {k}], got {n}")
    base_perm = base.permutation()
    if base_perm.size != k:
        raise ValueError(f"base matching must be full over {k} compartments")
    if n == 0:
        return Matching.from_permutation(base_perm)
    rng = check_rng(rng)
    moved = np.sort(rng.choice(k, size=n, replace=False))
    derangement = random_derangement(n, rng)
    perm = base_perm.copy()
    perm[moved] = base_perm[moved[derangement]]
    return Matching.from_permutation(perm)


@dataclass(frozen=True)
class StratifiedProposal:
    """Stratified permutation proposal around a base matching.

    Parameters
    ----------
    n_compartments : int
        Number of compartments K (permutations act on K slots).
    rate : float, optional
        Rate of the truncated shifted Poisson controlling how far proposals
        stray from the base. Default 1.0.
    n_strata : int, optional
        Number of strata H; stratum 1 is the base alone, strata 2..H-1 are
        single Hamming shells, and the last stratum pools all remaining
        shells. Clamped to K. Default 4.
    perms_per_stratum : tuple of int, optional
        Draw counts per stratum; the first must be 1 (the base itself).
        Default ``(1, 5, 5, 5)`` truncated/padded to the stratum count.
    """

    n_compartments: int
    rate: float = 1.0
    n_strata: int = 4
    perms_per_stratum: tuple = (1, 5, 5, 5)
    _pmf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = self.n_compartments
        if k < 2:
            raise ValueError("stratified proposals need at least 2 compartments")
        check_positive(self.rate, "rate")
        h = min(int(self.n_strata), k)
        if h < 2:
            raise ValueError("need at least 2 strata")
        counts = tuple(int(c) for c in self.perms_per_stratum)[:h]
        if len(counts) < h:
            counts = counts + (counts[-1],) * (h - len(counts))
        if counts[0] != 1:
            raise ValueError("the first stratum holds only the base; its count must be 1")
        if any(c < 1 for c in counts):
            raise ValueError("per-stratum draw counts must be positive")
        object.__setattr__(self, "n_strata", h)
        object.__setattr__(self, "perms_per_stratum", counts)
        # N ~ 1 + Poisson(rate), truncated to {1..K}; index j holds P(N=j+1)
        j = np.arange(k)
        log_pmf = -self.rate + j * math.log(self.rate) - np.array(
            [math.lgamma(v + 1) for v in j]
        )
        pmf = np.exp(log_pmf)
        object.__setattr__(self, "_pmf", pmf / pmf.sum())

    def shift_pmf(self, n: int) -> float:
        """P(N = n) for the truncated shifted Poisson, n in {1..K}."""
        if not 1 <= n <= self.n_compartments:
            return 0.0
        return float(self._pmf[n - 1])

    def stratum_weight(self, h: int) -> float:
        """Total proposal mass of stratum ``h`` (1-based)."""
        if not 1 <= h <= self.n_strata:
            raise ValueError(f"stratum index out of range: {h}")
        if h < self.n_strata:
            return self.shift_pmf(h)
        return float(self._pmf[self.n_strata - 1 :].sum())

    def stratum_density(self, sigma: Matching, base: Matching, h: int) -> float:
        """Within-stratum mass of ``sigma`` under stratum ``h``'s sampler."""
        n = base.hamming(sigma)
        shell = 1 if n == 0 else n
        if h < self.n_strata:
            if shell != h:
                return 0.0
            if h == 1:
                return 1.0
            return 1.0 / partial_derangement_count(self.n_compartments, h)
        if shell < self.n_strata:
            return 0.0
        return self.shift_pmf(n) / (
            self.stratum_weight(h) * partial_derangement_count(self.n_compartments, n)
        )

    def sample_stratum(self, base: Matching, h: int, rng) -> Matching:
        """Draw one matching from stratum ``h``'s within-stratum sampler."""
        rng = check_rng(rng)
        k = self.n_compartments
        if h == 1:
            return Matching.from_permutation(base.permutation())
        if h < self.n_strata:
            return sample_from_stratum(k, h, base, rng)
        shells = np.arange(self.n_strata, k + 1)
        probs = self._pmf[self.n_strata - 1 :]
        n = int(rng.choice(shells, p=probs / probs.sum()))
        return sample_from_stratum(k, n, base, rng)

    def density(self, sigma: Matching, base: Matching) -> float:
        """Exact proposal mass of ``sigma`` under the full generative process."""
        n = base.hamming(sigma)
        if n == 0:
            return self.shift_pmf(1)
        return self.shift_pmf(n) / partial_derangement_count(self.n_compartments, n)

    def sample(self, base: Matching, rng) -> Matching:
        """Draw one matching from the full proposal (inverse-CDF on N)."""
        rng = check_rng(rng)
        n = int(np.searchsorted(np.cumsum(self._pmf), rng.random(), side="right")) + 1
        if n == 1:
            return Matching.from_permutation(base.permutation())
        return sample_from_stratum(self.n_compartments, n, base, rng)
