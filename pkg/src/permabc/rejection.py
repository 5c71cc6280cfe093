"""One-shot rejection samplers and the critical-tolerance diagnostic.

Three estimators share the same prior-predictive rejection loop:

* :class:`VanillaABC` accepts when the compartment-wise distance under
  the identity ordering is within tolerance.
* :class:`PermABC` accepts when the distance minimized over compartment
  matchings is within tolerance and returns parameters realigned by the
  optimal matching.
* :class:`StratifiedPermABC` additionally estimates, per accepted draw,
  how many matchings fall inside the tolerance ball (by stratified
  importance sampling over permutations) and attaches that estimate as an
  importance weight, recovering the plain (unpermuted) pseudo-posterior at
  any tolerance.

Each estimator follows the scikit-learn convention: all configuration in
``__init__``, inference in ``fit(y)``, results in trailing-underscore
attributes.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .assignment import solve_rectangular
from .data import Matching, ObservedData, SimulatedData
from .diagnostics import TraceRow, unique_particle_rate
from .exceptions import BudgetExceededError, ConfigurationError, NotAvailableError
from .models import ParameterVector
from .permutations import StratifiedProposal
from .streams import substream
from .validation import check_positive

# exhaustive matching enumeration is vectorized over whole batches up to
# this many compartments; larger problems fall back to per-attempt solves
_ENUMERATION_LIMIT = 6


@dataclass
class AcceptedSample:
    """One accepted draw, realigned where applicable.

    ``simulations_used`` is the cumulative number of per-compartment
    simulator calls consumed by the run up to and including this
    acceptance.
    """

    theta: ParameterVector
    z: SimulatedData
    distance: float
    weight: float = 1.0
    simulations_used: int = 0


def as_observed_data(y) -> ObservedData:
    if isinstance(y, ObservedData):
        return y
    return ObservedData(np.asarray(y, dtype=float))


def _pairwise_sq_norms(y: ObservedData) -> np.ndarray:
    diff = y.compartments[:, None, :] - y.compartments[None, :, :]
    return np.einsum("kmn,kmn->km", diff, diff)


def critical_epsilon(y, *, exact_limit: int = 8, return_exact: bool = False):
    """Half the minimum self-distance of ``y`` over non-identity matchings.

    Below this tolerance at most one matching of any simulated dataset can
    satisfy the acceptance criterion. Exact for up to ``exact_limit``
    compartments (full enumeration); beyond that only transpositions are
    scanned, which yields an upper bound on the true minimum. With
    ``return_exact=True`` the bound status is reported alongside.
    """
    y = as_observed_data(y)
    k = y.n_compartments
    if k < 2:
        raise NotAvailableError("the critical tolerance needs at least 2 compartments")
    sq = _pairwise_sq_norms(y)
    w2 = y.weights**2
    if k <= exact_limit:
        perms = np.array(list(itertools.permutations(range(k))), dtype=np.intp)
        costs = (w2[None, :] * sq[np.arange(k)[None, :], perms]).sum(axis=1)
        identity = (perms == np.arange(k)).all(axis=1)
        value = 0.5 * math.sqrt(float(costs[~identity].min()))
        exact = True
    else:
        pair_cost = (w2[:, None] + w2[None, :]) * sq
        iu = np.triu_indices(k, 1)
        value = 0.5 * math.sqrt(float(pair_cost[iu].min()))
        exact = False
    if return_exact:
        return value, exact
    return value


def _batch_cost_matrices(y: ObservedData, z_batch: np.ndarray) -> np.ndarray:
    """Cost matrices for a batch of simulated datasets, shape (B, K, M)."""
    diff = y.compartments[None, :, None, :] - z_batch[:, None, :, :]
    sq = np.einsum("bkmn,bkmn->bkm", diff, diff)
    return (y.weights**2)[None, :, None] * sq


def _batch_min_matchings(costs: np.ndarray):
    """Optimal squared distance and matching per batch entry (square case)."""
    b, k, m = costs.shape
    if k != m:
        raise ValueError("batched matching expects square cost matrices")
    if k <= _ENUMERATION_LIMIT:
        perms = np.array(list(itertools.permutations(range(k))), dtype=np.intp)
        totals = costs[:, np.arange(k)[None, :], perms].sum(axis=2)
        best = np.argmin(totals, axis=1)
        return totals[np.arange(b), best], perms[best]
    sq_dist = np.empty(b)
    matchings = np.empty((b, k), dtype=np.intp)
    for i in range(b):
        result = solve_rectangular(costs[i])
        sq_dist[i] = result.total_cost
        matchings[i] = result.matching.permutation()
    return sq_dist, matchings


class _RejectionSampler(BaseEstimator):
    """Shared prior-predictive rejection machinery."""

    _requires_epsilon = False

    def __init__(
        self,
        model=None,
        n_samples=1000,
        epsilon=None,
        budget_cap=10_000_000,
        random_state=0,
        batch_size=4096,
    ):
        self.model = model
        self.n_samples = n_samples
        self.epsilon = epsilon
        self.budget_cap = budget_cap
        self.random_state = random_state
        self.batch_size = batch_size

    # subclasses: squared distance + matching per attempt
    def _evaluate(self, y, costs):
        raise NotImplementedError

    def _finalize_sample(self, y, costs_row, sq_dist, theta_g, theta_l, z, matching, rng, used):
        """Build the AcceptedSample (alignment and weighting hook)."""
        raise NotImplementedError

    def fit(self, y):
        """Draw ``n_samples`` accepted parameters for the observed data ``y``.

        With a fixed ``epsilon``, attempts continue until enough samples
        are accepted (raising a budget error with partial results if the
        cap runs out). With ``epsilon=None``, the entire budget is spent
        and the ``n_samples`` closest draws are kept, the realized
        tolerance being reported as ``epsilon_``.
        """
        if self.model is None:
            raise ConfigurationError("a model is required")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be positive")
        if self.epsilon is None and self._requires_epsilon:
            raise ConfigurationError(f"{type(self).__name__} requires a fixed epsilon")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon!r}")

        t_start = time.perf_counter()
        y = as_observed_data(y)
        k = y.n_compartments
        rng = substream(self.random_state)
        budget = int(self.budget_cap)
        quantile_mode = self.epsilon is None
        eps_sq = None if quantile_mode else float(self.epsilon) ** 2

        kept = []  # (sq_dist, order, theta_g, theta_l, z, matching, calls_at_accept)
        order = 0
        calls = 0
        attempts = 0
        solves = 0
        while True:
            if quantile_mode:
                remaining = (budget - calls) // k
                if remaining <= 0:
                    break
            else:
                if len(kept) >= self.n_samples:
                    break
                if calls >= budget:
                    partial = [
                        self._finalize_sample(y, c, sq, tg, tl, z, m, rng, used)
                        for (sq, _, tg, tl, z, m, used, c) in sorted(kept, key=lambda r: r[1])
                    ]
                    raise BudgetExceededError(
                        f"budget of {budget} simulator calls exhausted with "
                        f"{len(kept)}/{self.n_samples} accepted",
                        partial_samples=partial,
                        n_simulations=calls,
                    )
                remaining = max(1, (budget - calls) // k)
            size = int(min(self.batch_size, remaining))
            globals_, locals_ = self.model.sample_prior_batch(size, k, rng)
            z_batch = self.model.simulate_batch(globals_, locals_, rng)
            costs = _batch_cost_matrices(y, z_batch)
            sq_dists, matchings, used_solver = self._evaluate(y, costs)
            solves += used_solver
            if quantile_mode:
                if kept and len(kept) >= self.n_samples:
                    threshold = max(r[0] for r in kept)
                else:
                    threshold = np.inf
                candidates = np.nonzero(sq_dists <= threshold)[0]
            else:
                candidates = np.nonzero(sq_dists <= eps_sq)[0]
            for idx in candidates:
                used = calls + (int(idx) + 1) * k
                kept.append(
                    (
                        float(sq_dists[idx]),
                        order,
                        globals_[idx],
                        locals_[idx],
                        z_batch[idx],
                        matchings[idx] if matchings is not None else None,
                        used,
                        costs[idx],
                    )
                )
                order += 1
            calls += size * k
            attempts += size
            if quantile_mode and len(kept) > self.n_samples:
                kept.sort(key=lambda r: (r[0], r[1]))
                kept = kept[: self.n_samples]

        if quantile_mode:
            kept.sort(key=lambda r: (r[0], r[1]))
            kept = kept[: self.n_samples]
            if not kept:
                raise BudgetExceededError(
                    "budget too small for a single attempt", n_simulations=calls
                )
            self.epsilon_ = math.sqrt(kept[-1][0])
        else:
            kept.sort(key=lambda r: r[1])  # acceptance order
            kept = kept[: self.n_samples]  # trim any batch overshoot
            self.epsilon_ = float(self.epsilon)

        samples = [
            self._finalize_sample(y, c, sq, tg, tl, z, m, rng, used)
            for (sq, _, tg, tl, z, m, used, c) in kept
        ]
        self._store_results(y, samples, calls, attempts, solves, t_start)
        return self

    def _store_results(self, y, samples, calls, attempts, solves, t_start):
        self.samples_ = samples
        self.n_simulations_ = calls
        self.n_attempts_ = attempts
        self.n_assignment_solves_ = solves
        self.global_samples_ = np.array([s.theta.global_block for s in samples])
        self.local_samples_ = np.array([s.theta.local_blocks for s in samples])
        self.distances_ = np.array([s.distance for s in samples])
        self.weights_ = np.array([s.weight for s in samples])
        rate = unique_particle_rate([s.theta for s in samples]) if samples else 0.0
        self.trace_ = [
            TraceRow(
                iteration=0,
                epsilon=self.epsilon_,
                m_or_l=y.n_compartments,
                alive_count=len(samples),
                unique_particle_rate=rate,
                simulator_calls=calls,
                assignment_solves=solves,
                wall_time_seconds=time.perf_counter() - t_start,
            )
        ]


class VanillaABC(_RejectionSampler):
    """Plain rejection ABC: compartments compared in their given order."""

    def _evaluate(self, y, costs):
        k = costs.shape[1]
        diag = costs[:, np.arange(k), np.arange(k)].sum(axis=1)
        return diag, None, 0

    def _finalize_sample(self, y, costs_row, sq_dist, theta_g, theta_l, z, matching, rng, used):
        return AcceptedSample(
            theta=ParameterVector(theta_g, theta_l),
            z=SimulatedData(z),
            distance=math.sqrt(max(sq_dist, 0.0)),
            simulations_used=used,
        )


class PermABC(_RejectionSampler):
    """Rejection ABC accepting on the best compartment matching.

    Accepted draws are returned realigned: local block ``k`` of an output
    sample corresponds to observed compartment ``k``.
    """

    def _evaluate(self, y, costs):
        sq, matchings = _batch_min_matchings(costs)
        return sq, matchings, costs.shape[0]

    def _finalize_sample(self, y, costs_row, sq_dist, theta_g, theta_l, z, matching, rng, used):
        return AcceptedSample(
            theta=ParameterVector(theta_g, theta_l[matching]),
            z=SimulatedData(z[matching]),
            distance=math.sqrt(max(sq_dist, 0.0)),
            simulations_used=used,
        )


class StratifiedPermABC(_RejectionSampler):
    """Rejection sampler with stratified permutation reweighting.

    Each accepted draw receives a weight proportional to an unbiased
    stratified importance-sampling estimate of the number of in-ball
    matchings, and is realigned by a matching drawn among the in-ball
    candidates. Weighted samples target the plain pseudo-posterior at any
    tolerance.
    """

    _requires_epsilon = True

    def __init__(
        self,
        model=None,
        n_samples=1000,
        epsilon=None,
        budget_cap=10_000_000,
        random_state=0,
        batch_size=4096,
        proposal_rate=1.0,
        n_strata=4,
        perms_per_stratum=(1, 5, 5, 5),
    ):
        super().__init__(
            model=model,
            n_samples=n_samples,
            epsilon=epsilon,
            budget_cap=budget_cap,
            random_state=random_state,
            batch_size=batch_size,
        )
        self.proposal_rate = proposal_rate
        self.n_strata = n_strata
        self.perms_per_stratum = perms_per_stratum

    def _evaluate(self, y, costs):
        sq, matchings = _batch_min_matchings(costs)
        return sq, matchings, costs.shape[0]

    def _proposal(self, k):
        return StratifiedProposal(
            n_compartments=k,
            rate=self.proposal_rate,
            n_strata=self.n_strata,
            perms_per_stratum=self.perms_per_stratum,
        )

    def _finalize_sample(self, y, costs_row, sq_dist, theta_g, theta_l, z, matching, rng, used):
        k = len(matching)
        proposal = self._proposal(k)
        base = Matching.from_permutation(matching)
        eps_sq = float(self.epsilon) ** 2
        rows = np.arange(k)

        candidates = []
        weights = []
        estimate = 0.0
        for h in range(1, proposal.n_strata + 1):
            n_draws = proposal.perms_per_stratum[h - 1]
            inv_total = 0.0
            for _ in range(n_draws):
                sigma = proposal.sample_stratum(base, h, rng)
                perm = sigma.permutation()
                in_ball = float(costs_row[rows, perm].sum()) <= eps_sq
                if in_ball:
                    contribution = 1.0 / proposal.stratum_density(sigma, base, h)
                    inv_total += contribution
                    candidates.append(perm)
                    weights.append(contribution)
            estimate += inv_total / n_draws
        if not candidates or estimate <= 0.0:
            raise AssertionError(
                "the optimal matching must be in the ball for an accepted draw"
            )
        probs = np.array(weights) / sum(weights)
        chosen = candidates[int(rng.choice(len(candidates), p=probs))]
        return AcceptedSample(
            theta=ParameterVector(theta_g, theta_l[chosen]),
            z=SimulatedData(z[chosen]),
            distance=math.sqrt(float(costs_row[rows, chosen].sum())),
            weight=estimate,
            simulations_used=used,
        )
