"""Population quality metrics, two-sample tests, and benchmark bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import NotAvailableError


@dataclass(frozen=True)
class TraceRow:
    """One sequential-sampler iteration's bookkeeping."""

    iteration: int
    epsilon: float
    m_or_l: int
    alive_count: int
    unique_particle_rate: float
    simulator_calls: int
    assignment_solves: int
    wall_time_seconds: float

    FIELDS = (
        "iteration",
        "epsilon",
        "m_or_l",
        "alive_count",
        "unique_particle_rate",
        "simulator_calls",
        "assignment_solves",
        "wall_time_seconds",
    )

    def as_tuple(self):
        return tuple(getattr(self, f) for f in self.FIELDS)


def unique_particle_rate(parameter_vectors) -> float:
    """Fraction of bitwise-distinct parameter vectors in a population.

    Identity is exact byte equality: duplicates arise from resampling
    copies, which are bit-identical, so no tolerance bucketing is applied.
    """
    items = list(parameter_vectors)
    if not items:
        raise ValueError("population is empty")
    seen = set()
    for theta in items:
        arr = np.ascontiguousarray(theta if isinstance(theta, np.ndarray) else theta.flat())
        seen.add(arr.tobytes())
    return len(seen) / len(items)


def effective_sample_size(weights) -> float:
    """(sum w)^2 / sum w^2; equals the alive count for binary weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0):
        raise ValueError("weights must be nonnegative and nonempty")
    total = w.sum()
    if total == 0:
        raise ValueError("all weights are zero")
    return float(total**2 / np.sum(w**2))


def ks_distance(samples_a, samples_b=None, cdf=None):
    """Kolmogorov-Smirnov statistic and asymptotic p-value.

    Two-sample when ``samples_b`` is given, one-sample against ``cdf``
    (a callable) otherwise.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    if a.size < 20:
        raise NotAvailableError("need at least 20 samples per side for a p-value")
    if (samples_b is None) == (cdf is None):
        raise ValueError("provide exactly one of samples_b or cdf")
    if samples_b is not None:
        b = np.asarray(samples_b, dtype=float).ravel()
        if b.size < 20:
            raise NotAvailableError("need at least 20 samples per side for a p-value")
        result = stats.ks_2samp(a, b, method="asymp")
    else:
        result = stats.kstest(a, cdf)
    return float(result.statistic), float(result.pvalue)


@dataclass(frozen=True)
class BudgetCurveRow:
    """Simulation cost and tolerance of one method at the unique-count target."""

    method: str
    simulations: int
    epsilon: float
    complete: bool


def budget_curve(traces_by_method: dict, target_unique: int = 1000, population_size=None):
    """Summarize runs at the point where they still held ``target_unique`` uniques.

    For each method, scans its trace in iteration order and keeps the last
    row whose unique-particle count (rate times population size, or times
    the alive count when no population size is given) is at least the
    target; the row's cumulative simulator calls and tolerance are
    reported. Methods that never reach the target are flagged incomplete.
    """
    rows = []
    for method, trace in traces_by_method.items():
        best = None
        for row in trace:
            n = population_size if population_size is not None else row.alive_count
            if row.unique_particle_rate * n >= target_unique and np.isfinite(row.epsilon):
                best = row
        if best is None:
            rows.append(BudgetCurveRow(method, 0, float("nan"), False))
        else:
            rows.append(
                BudgetCurveRow(method, best.simulator_calls, best.epsilon, True)
            )
    return rows
