"""Core in-memory data containers: observed/simulated datasets and matchings.

Observed data hold ``K`` compartments of ``n`` real observations each plus a
positive per-compartment weight. Simulated data hold ``M`` compartments and
may be wider than the observed data when extra compartments are simulated.
A matching is an injection from observed compartment indices into simulated
compartment indices; a full matching pairs every observed compartment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_matrix


@dataclass(frozen=True)
class ObservedData:
    """Observed dataset: ``K`` compartments x ``n`` values, with weights.

    Parameters
    ----------
    compartments : array-like, shape (K, n)
        One row per compartment.
    weights : array-like, shape (K,), optional
        Positive relative influence of each compartment in the distance.
        Defaults to 1 for every compartment.
    """

    compartments: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        comp = as_matrix(self.compartments, "compartments")
        object.__setattr__(self, "compartments", comp)
        if self.weights is None:
            w = np.ones(comp.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
        if w.shape != (comp.shape[0],):
            raise ValueError(
                f"weights must have shape ({comp.shape[0]},), got {w.shape}"
            )
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("all weights must be positive and finite")
        object.__setattr__(self, "weights", w)

    @property
    def n_compartments(self) -> int:
        return self.compartments.shape[0]

    @property
    def n_obs(self) -> int:
        return self.compartments.shape[1]


@dataclass(frozen=True)
class SimulatedData:
    """Simulated dataset: ``M`` compartments x ``n`` values.

    ``M`` equals the observed ``K`` for plain matching and exceeds it when
    surplus compartments are simulated.
    """

    compartments: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "compartments", as_matrix(self.compartments, "compartments")
        )

    @property
    def n_compartments(self) -> int:
        return self.compartments.shape[0]

    @property
    def n_obs(self) -> int:
        return self.compartments.shape[1]


@dataclass(frozen=True)
class Matching:
    """Injection from observed compartment indices to simulated ones.

    Stored as two parallel index arrays. Indices on each side are pairwise
    distinct; a full matching over ``K`` observed compartments has size
    ``K``.
    """

    observed: np.ndarray
    simulated: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.intp).ravel()
        sim = np.asarray(self.simulated, dtype=np.intp).ravel()
        if obs.shape != sim.shape:
            raise ValueError("observed and simulated index arrays differ in length")
        if len(np.unique(obs)) != obs.size or len(np.unique(sim)) != sim.size:
            raise ValueError("matching indices must be pairwise distinct on each side")
        if obs.size and (obs.min() < 0 or sim.min() < 0):
            raise ValueError("matching indices must be nonnegative")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "simulated", sim)

    @classmethod
    def identity(cls, k: int) -> "Matching":
        idx = np.arange(k, dtype=np.intp)
        return cls(idx, idx.copy())

    @classmethod
    def from_permutation(cls, perm) -> "Matching":
        """Full matching sending observed ``k`` to simulated ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.intp)
        return cls(np.arange(perm.size, dtype=np.intp), perm)

    @property
    def size(self) -> int:
        return self.observed.size

    def is_full(self, k: int) -> bool:
        return self.size == k and np.array_equal(np.sort(self.observed), np.arange(k))

    def permutation(self) -> np.ndarray:
        """Array ``p`` with ``p[observed] = simulated`` (full matchings only)."""
        k = self.size
        if not self.is_full(k):
            raise ValueError("matching is not full over its observed indices")
        p = np.empty(k, dtype=np.intp)
        p[self.observed] = self.simulated
        return p

    def simulated_for(self, observed_index: int):
        """Simulated index matched to ``observed_index``, or None."""
        hits = np.nonzero(self.observed == observed_index)[0]
        if hits.size == 0:
            return None
        return int(self.simulated[hits[0]])

    def hamming(self, other: "Matching") -> int:
        """Number of observed slots mapped differently (full matchings)."""
        return int(np.sum(self.permutation() != other.permutation()))


@dataclass
class LoadReport:
    """Audit trail produced while loading external data."""

    filled_gaps: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    def flag_gap(self, department: str, date) -> None:
        self.filled_gaps.append((department, date))

    def summary(self) -> str:
        lines = [f"filled {len(self.filled_gaps)} missing day(s) with 0"]
        for dep, date in self.filled_gaps:
            lines.append(f"  fill: department={dep} date={date}")
        lines.extend(self.messages)
        return "\n".join(lines)
