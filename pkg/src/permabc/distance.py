"""Weighted compartment-wise distances between observed and simulated data.

The distance between datasets is the square root of a weighted sum of
squared Euclidean distances between matched compartments,

    d(y, z)^2 = sum_k  w_k^2 * ||y_k - z_{sigma(k)}||_2^2 ,

optionally restricted to a subset of matched pairs. All functions here are
pure; squared values are used internally and by the assignment solvers, the
square root is only taken at the API boundary.
"""

from __future__ import annotations

import numpy as np

from .data import Matching, ObservedData, SimulatedData


def _check_pair_dims(y: ObservedData, z: SimulatedData) -> None:
    if y.n_obs != z.n_obs:
        raise ValueError(
            f"observed and simulated compartments differ in length "
            f"({y.n_obs} vs {z.n_obs})"
        )


def cost_matrix(y: ObservedData, z: SimulatedData) -> np.ndarray:
    """K x M matrix with entry (k, m) = w_k^2 * ||y_k - z_m||^2.

    The squared matched distance for any matching equals the sum of the
    selected entries, which is what the assignment solvers minimize.
    """
    _check_pair_dims(y, z)
    diff = y.compartments[:, None, :] - z.compartments[None, :, :]
    sq = np.einsum("kmn,kmn->km", diff, diff)
    return (y.weights**2)[:, None] * sq


def squared_matched_distance(
    y: ObservedData, z: SimulatedData, matching: Matching
) -> float:
    """Squared weighted distance over the matched pairs only."""
    _check_pair_dims(y, z)
    if matching.size == 0:
        return 0.0
    if matching.size > y.n_compartments or matching.size > z.n_compartments:
        raise ValueError("matching is larger than the datasets")
    if matching.observed.size and matching.observed.max() >= y.n_compartments:
        raise ValueError("matching references an observed compartment out of range")
    if matching.simulated.size and matching.simulated.max() >= z.n_compartments:
        raise ValueError("matching references a simulated compartment out of range")
    diff = y.compartments[matching.observed] - z.compartments[matching.simulated]
    w2 = y.weights[matching.observed] ** 2
    return float(np.sum(w2 * np.einsum("ln,ln->l", diff, diff)))


def full_distance(y: ObservedData, z: SimulatedData, matching: Matching) -> float:
    """Weighted distance under a full matching of all observed compartments."""
    if not matching.is_full(y.n_compartments):
        raise ValueError("full_distance requires a full matching; use restricted_distance")
    return float(np.sqrt(squared_matched_distance(y, z, matching)))


def restricted_distance(y: ObservedData, z: SimulatedData, matching: Matching) -> float:
    """Weighted distance over a (possibly partial) matching of size L <= K."""
    return float(np.sqrt(squared_matched_distance(y, z, matching)))
