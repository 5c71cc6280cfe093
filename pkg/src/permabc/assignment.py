"""Exact linear-sum-assignment solvers for compartment matching.

Three variants are exposed:

* :func:`solve_full` — minimum-cost perfect matching of a square matrix,
* :func:`solve_rectangular` — minimum-cost injection of K rows into M >= K
  columns (a partial K-permutation of the columns),
* :func:`solve_under_match` — best matching of exactly L of K rows to L of
  K columns, reduced to a square problem by appending zero-cost dummy rows
  and columns.

The core is a shortest-augmenting-path solver with dual potentials,
vectorized over columns. One row is inserted per augmentation, so the
complexity is O(K^2 M) for a K x M matrix. Ties in the column scan are
broken toward the lowest column index, making results deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Matching
from .validation import check_cost_matrix

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class AssignmentResult:
    """Optimal matching together with its total cost."""

    matching: Matching
    total_cost: float


def _augmenting_path_solve_numpy(cost: np.ndarray) -> np.ndarray:
    """Column index assigned to each row of ``cost`` (rows <= columns)."""
    n_rows, n_cols = cost.shape
    u = np.zeros(n_rows)
    v = np.zeros(n_cols + 1)  # slot n_cols belongs to the virtual column
    # row matched to each column; n_rows acts as the "no row" sentinel and
    # the virtual column hosts the row currently being inserted
    col_row = np.full(n_cols + 1, n_rows, dtype=np.intp)
    predecessor = np.zeros(n_cols, dtype=np.intp)

    for row in range(n_rows):
        col_row[n_cols] = row
        j0 = n_cols
        min_reduced = np.full(n_cols, np.inf)
        used = np.zeros(n_cols + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            available = ~used[:n_cols]
            reduced = cost[i0] - u[i0] - v[:n_cols]
            better = available & (reduced < min_reduced)
            min_reduced[better] = reduced[better]
            predecessor[better] = j0

            scan = np.where(available, min_reduced, np.inf)
            j1 = int(np.argmin(scan))
            delta = scan[j1]

            used_idx = np.nonzero(used)[0]
            u[col_row[used_idx]] += delta
            v[used_idx] -= delta
            min_reduced[available] -= delta

            j0 = j1
            if col_row[j0] == n_rows:
                break
        # augment along the alternating path back to the virtual column
        while j0 != n_cols:
            j_prev = predecessor[j0]
            col_row[j0] = col_row[j_prev]
            j0 = j_prev

    row_col = np.full(n_rows, -1, dtype=np.intp)
    for j in range(n_cols):
        if col_row[j] != n_rows:
            row_col[col_row[j]] = j
    return row_col


def _augmenting_path_solve_scalar(cost):
    """Same algorithm with explicit scalar loops (compiled when possible)."""
    n_rows, n_cols = cost.shape
    u = np.zeros(n_rows)
    v = np.zeros(n_cols + 1)
    col_row = np.full(n_cols + 1, n_rows, dtype=np.int64)
    predecessor = np.zeros(n_cols, dtype=np.int64)
    min_reduced = np.empty(n_cols)
    used = np.zeros(n_cols + 1, dtype=np.bool_)

    for row in range(n_rows):
        col_row[n_cols] = row
        j0 = n_cols
        for j in range(n_cols + 1):
            used[j] = False
        for j in range(n_cols):
            min_reduced[j] = np.inf
        while True:
            used[j0] = True
            i0 = col_row[j0]
            delta = np.inf
            j1 = -1
            for j in range(n_cols):
                if not used[j]:
                    reduced = cost[i0, j] - u[i0] - v[j]
                    if reduced < min_reduced[j]:
                        min_reduced[j] = reduced
                        predecessor[j] = j0
                    if min_reduced[j] < delta:
                        delta = min_reduced[j]
                        j1 = j
            for j in range(n_cols + 1):
                if used[j]:
                    u[col_row[j]] += delta
                    v[j] -= delta
                elif j < n_cols:
                    min_reduced[j] -= delta
            j0 = j1
            if col_row[j0] == n_rows:
                break
        while j0 != n_cols:
            j_prev = predecessor[j0]
            col_row[j0] = col_row[j_prev]
            j0 = j_prev

    row_col = np.full(n_rows, -1, dtype=np.int64)
    for j in range(n_cols):
        if col_row[j] != n_rows:
            row_col[col_row[j]] = j
    return row_col


if _HAVE_NUMBA:
    _augmenting_path_solve = _njit(cache=True)(_augmenting_path_solve_scalar)
else:  # pragma: no cover
    _augmenting_path_solve = _augmenting_path_solve_numpy


def solve_rectangular(cost) -> AssignmentResult:
    """Minimum-cost injection of the K rows into the M >= K columns."""
    cost = check_cost_matrix(cost)
    n_rows, n_cols = cost.shape
    if n_rows > n_cols:
        raise ValueError(
            f"cost matrix needs at least as many columns as rows, got {cost.shape}"
        )
    row_col = _augmenting_path_solve(cost)
    matching = Matching(np.arange(n_rows, dtype=np.intp), row_col)
    total = float(cost[np.arange(n_rows), row_col].sum())
    return AssignmentResult(matching=matching, total_cost=total)


def solve_full(cost) -> AssignmentResult:
    """Minimum-cost perfect matching of a square cost matrix."""
    cost = check_cost_matrix(cost)
    if cost.shape[0] != cost.shape[1]:
        raise ValueError(f"solve_full requires a square matrix, got {cost.shape}")
    return solve_rectangular(cost)


def solve_under_match(cost, n_matched: int) -> AssignmentResult:
    """Best matching of exactly ``n_matched`` rows to as many columns.

    The K x K matrix is extended with K - L dummy rows and K - L dummy
    columns of zero cost; the dummy-dummy block carries a large finite
    sentinel so each dummy absorbs a real row or column, forcing exactly
    L real pairs. Dummy pairs are stripped from the returned matching.
    """
    cost = check_cost_matrix(cost)
    k = cost.shape[0]
    if cost.shape[1] != k:
        raise ValueError(f"solve_under_match requires a square matrix, got {cost.shape}")
    if not 1 <= n_matched <= k:
        raise ValueError(f"n_matched must lie in [1, {k}], got {n_matched}")
    if n_matched == k:
        return solve_full(cost)

    n_dummy = k - n_matched
    size = k + n_dummy
    sentinel = float(cost.sum()) + 1.0
    extended = np.zeros((size, size))
    extended[:k, :k] = cost
    extended[k:, k:] = sentinel
    result = solve_rectangular(extended)
    perm = result.matching.permutation()
    real = (np.arange(size) < k) & (perm < k)
    obs = np.nonzero(real)[0].astype(np.intp)
    matching = Matching(obs, perm[real])
    total = float(cost[matching.observed, matching.simulated].sum())
    return AssignmentResult(matching=matching, total_cost=total)
