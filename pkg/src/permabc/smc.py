"""Sequential Monte Carlo engine with permutation-matched acceptance.

One estimator, :class:`PermABCSMC`, drives three sequences of intermediate
distributions:

``epsilon-descent``
    Classic adaptive tolerance descent: the tolerance is lowered to a
    quantile of the surviving particles' matched distances each iteration.
``over-sampling``
    The tolerance is fixed (calibrated from the initial population) while
    the number of simulated compartments shrinks from ``m_initial`` down to
    the observed count, with particles re-tested after each shrink through
    a duplication mechanism that tries several column subsets.
``under-matching``
    The tolerance is fixed while the number of compartments required to
    match grows from ``l_initial`` up to the observed count.

Each iteration kills particles violating the new criterion, resamples the
survivors systematically, and rejuvenates every particle with a blockwise
Metropolis-within-Gibbs kernel: one global-parameter move that re-simulates
every active compartment, followed by local moves over a random equal
partition of the matched compartments, plus a prior refresh of unmatched
compartments where those exist. All moves re-solve the matching and condition
acceptance on staying inside the tolerance ball.

Randomness is drawn from counter-based streams keyed by (seed, phase,
iteration, particle index), so results are bit-identical for any thread
count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .assignment import solve_full, solve_rectangular, solve_under_match
from .data import Matching, ObservedData, SimulatedData
from .diagnostics import TraceRow, unique_particle_rate
from .exceptions import ConfigurationError, ExtinctionError, SimulationFailure
from .models import ParameterVector
from .rejection import as_observed_data
from .streams import substream

_TAG_INIT, _TAG_DUP, _TAG_RESAMPLE, _TAG_MOVE = 1, 2, 3, 4

STRATEGIES = ("epsilon-descent", "over-sampling", "under-matching")


@dataclass
class Particle:
    """One SMC particle: parameters, simulated data, matching, distance."""

    theta: ParameterVector
    z: np.ndarray  # (M, n_obs)
    matching: Matching
    sq_distance: float
    alive: bool = True

    def copy(self) -> "Particle":
        return Particle(
            theta=ParameterVector(
                self.theta.global_block.copy(), self.theta.local_blocks.copy()
            ),
            z=self.z.copy(),
            matching=Matching(
                self.matching.observed.copy(), self.matching.simulated.copy()
            ),
            sq_distance=self.sq_distance,
            alive=self.alive,
        )

    @property
    def distance(self) -> float:
        return math.sqrt(max(self.sq_distance, 0.0))


@dataclass(frozen=True)
class KernelState:
    """Random-walk proposal variances for one rejuvenation sweep.

    Local variances are per observed slot (aligned across particles by each
    particle's matching); slots matched too rarely, and any zero-variance
    coordinate, fall back to ``fallback_var``, the coordinate-wise maximum
    over well-estimated slots.
    """

    global_var: np.ndarray  # (d_glob,)
    local_var: np.ndarray  # (K, d_loc)
    fallback_var: np.ndarray  # (d_loc,)
    n_blocks: int


def next_m(k: int, m_current: int, gamma: float) -> int:
    """Next compartment count of the shrinking over-sampling schedule."""
    if m_current <= k:
        raise ValueError("the schedule has already reached the observed count")
    return min(int(math.floor(k + (m_current - k) * gamma)), m_current - 1)


def next_l(k: int, l_current: int, gamma: float) -> int:
    """Next matched count of the growing under-matching schedule."""
    if l_current >= k:
        raise ValueError("the schedule has already reached the observed count")
    return max(int(math.floor(l_current + (k - l_current) * (1.0 - gamma))), l_current + 1)


def order_statistic(values, fraction: float) -> float:
    """The ceil(fraction * len)-th smallest value (1-based order statistic)."""
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size == 0:
        raise ValueError("no values")
    rank = max(1, int(math.ceil(fraction * arr.size)))
    return float(arr[rank - 1])


def adapt_epsilon(alive_distances, alpha: float) -> float:
    """Next tolerance: the alpha-order statistic of surviving distances."""
    return order_statistic(alive_distances, alpha)


def systematic_resample(population, n_target: int, rng):
    """Systematic resampling among alive particles with equal weights."""
    alive_idx = [i for i, p in enumerate(population) if p.alive]
    if not alive_idx:
        raise ExtinctionError("no alive particles to resample")
    cum = np.arange(1, len(alive_idx) + 1) / len(alive_idx)
    positions = (np.arange(n_target) + rng.random()) / n_target
    picks = np.searchsorted(cum, positions, side="left")
    return [population[alive_idx[j]].copy() for j in picks]


def _solve_matching(cost: np.ndarray, strategy: str, n_matched: int):
    if strategy == "under-matching" and n_matched < cost.shape[0]:
        return solve_under_match(cost, n_matched)
    if cost.shape[0] == cost.shape[1]:
        return solve_full(cost)
    return solve_rectangular(cost)


def _cost_matrix_raw(y: ObservedData, z: np.ndarray) -> np.ndarray:
    diff = y.compartments[:, None, :] - z[None, :, :]
    sq = np.einsum("kmn,kmn->km", diff, diff)
    return (y.weights**2)[:, None] * sq


def duplicate_for_transition(particle, y, m_next: int, n_candidates: int, eps_sq, rng):
    """Re-test one particle after shrinking to ``m_next`` compartments.

    Candidate 0 truncates to the first ``m_next`` compartments (keeping the
    current matching whenever it already lies inside them); the remaining
    candidates select uniformly random ordered subsets. The first candidate
    whose re-solved matching stays in the ball survives; if none passes the
    particle dies. Returns ``(survivor_or_None, solves_used)``.
    """
    m_current = particle.z.shape[0]
    if m_next >= m_current:
        raise ValueError("duplication only applies to a shrinking compartment count")
    solves = 0
    for r in range(n_candidates):
        if r == 0:
            selection = np.arange(m_next)
        else:
            selection = rng.choice(m_current, size=m_next, replace=False)
        z_sel = particle.z[selection]
        cost = _cost_matrix_raw(y, z_sel)
        result = _solve_matching(cost, "over-sampling", y.n_compartments)
        solves += 1
        if result.total_cost <= eps_sq:
            survivor = Particle(
                theta=ParameterVector(
                    particle.theta.global_block.copy(),
                    particle.theta.local_blocks[selection].copy(),
                ),
                z=z_sel.copy(),
                matching=result.matching,
                sq_distance=result.total_cost,
                alive=True,
            )
            return survivor, solves
    return None, solves


def compute_kernel_state(population, n_slots: int, n_blocks: int, min_matched: int):
    """Proposal variances (twice the aligned empirical variance) per slot.

    ``min_matched`` is the smallest number of particles in which a slot
    must be matched for its own variance to be used.
    """
    alive = [p for p in population if p.alive]
    if len(alive) < 2:
        raise ValueError("kernel adaptation needs at least 2 alive particles")
    d_glob = alive[0].theta.global_block.size
    d_loc = alive[0].theta.local_blocks.shape[1]

    if d_glob:
        stacked = np.stack([p.theta.global_block for p in alive])
        global_var = 2.0 * stacked.var(axis=0)
    else:
        global_var = np.empty(0)

    slot_values = [[] for _ in range(n_slots)]
    for p in alive:
        for obs, sim in zip(p.matching.observed, p.matching.simulated):
            slot_values[obs].append(p.theta.local_blocks[sim])
    local_var = np.zeros((n_slots, d_loc))
    estimated = np.zeros(n_slots, dtype=bool)
    for k in range(n_slots):
        if len(slot_values[k]) >= min_matched:
            local_var[k] = 2.0 * np.stack(slot_values[k]).var(axis=0)
            estimated[k] = True

    fallback = np.zeros(d_loc)
    for c in range(d_loc):
        positive = local_var[estimated, c]
        positive = positive[positive > 0]
        fallback[c] = positive.max() if positive.size else 1.0
    for k in range(n_slots):
        if not estimated[k]:
            local_var[k] = fallback
        else:
            zero = local_var[k] <= 0
            local_var[k][zero] = fallback[zero]
    if d_glob:
        zero = global_var <= 0
        if np.any(zero):
            positive = global_var[~zero]
            global_var[zero] = positive.max() if positive.size else 1.0
    return KernelState(
        global_var=global_var,
        local_var=local_var,
        fallback_var=fallback,
        n_blocks=n_blocks,
    )


def _normal_logpdf_sum(x, mean, var) -> float:
    return float(np.sum(-0.5 * ((x - mean) ** 2 / var) - 0.5 * np.log(var)))


def _slot_variances(sim_indices, matching: Matching, state: KernelState):
    """Proposal variance rows for given simulated compartments under a matching."""
    slot_of = {int(s): int(o) for o, s in zip(matching.observed, matching.simulated)}
    rows = np.empty((len(sim_indices), state.fallback_var.size))
    for i, j in enumerate(sim_indices):
        slot = slot_of.get(int(j))
        rows[i] = state.local_var[slot] if slot is not None else state.fallback_var
    return rows


def move_particle(particle, y, eps_sq, state, strategy, n_matched, model, rng):
    """One rejuvenation sweep of a single in-ball particle.

    Performs a global random-walk move (re-simulating every compartment and
    re-solving the matching), then blockwise local moves over a random equal
    partition of the matched compartments, then a prior refresh of any
    unmatched compartments. Every accepted move stays inside the tolerance
    ball, so the output distance never exceeds the tolerance.

    Returns ``(particle, simulator_calls, assignment_solves)``.
    """
    theta_g = particle.theta.global_block.copy()
    locals_ = particle.theta.local_blocks.copy()
    z = particle.z.copy()
    matching = particle.matching
    sq = particle.sq_distance
    m_total = locals_.shape[0]
    calls = 0
    solves = 0

    # global move; the proposal variance of the global block does not depend
    # on the matching, so its forward/reverse proposal terms cancel
    if model.d_glob:
        proposal = theta_g + rng.normal(0.0, 1.0, size=theta_g.shape) * np.sqrt(
            state.global_var
        )
        log_prior_new = model.log_prior_global(proposal)
        if np.isfinite(log_prior_new):
            try:
                z_new = model.simulate_compartments(proposal, locals_, rng)
                calls += m_total
                failed = False
            except SimulationFailure:
                calls += m_total
                failed = True
            if not failed:
                result = _solve_matching(_cost_matrix_raw(y, z_new), strategy, n_matched)
                solves += 1
                if result.total_cost <= eps_sq:
                    log_ratio = log_prior_new - model.log_prior_global(theta_g)
                    if math.log(rng.random()) <= log_ratio:
                        theta_g = proposal
                        z = z_new
                        matching = result.matching
                        sq = result.total_cost

    # blockwise local moves over the matched simulated compartments
    matched_sims = matching.simulated.copy()
    h_eff = max(1, min(state.n_blocks, matched_sims.size))
    shuffled = rng.permutation(matched_sims)
    blocks = np.array_split(shuffled, h_eff) if matched_sims.size else []
    for block in blocks:
        block = np.asarray(block, dtype=np.intp)
        if block.size == 0:
            continue
        var_forward = _slot_variances(block, matching, state)
        proposal = locals_[block] + rng.normal(0.0, 1.0, size=(block.size, locals_.shape[1])) * np.sqrt(var_forward)
        log_prior_new = float(np.sum(model.log_prior_locals(proposal)))
        if not np.isfinite(log_prior_new):
            continue
        try:
            z_block = model.simulate_compartments(theta_g, proposal, rng)
            calls += block.size
        except SimulationFailure:
            calls += block.size
            continue
        z_new = z.copy()
        z_new[block] = z_block
        result = _solve_matching(_cost_matrix_raw(y, z_new), strategy, n_matched)
        solves += 1
        if result.total_cost > eps_sq:
            continue
        locals_new = locals_.copy()
        locals_new[block] = proposal
        var_reverse = _slot_variances(block, result.matching, state)
        log_prior_old = float(np.sum(model.log_prior_locals(locals_[block])))
        log_ratio = (
            log_prior_new
            + _normal_logpdf_sum(locals_[block], proposal, var_reverse)
            - log_prior_old
            - _normal_logpdf_sum(proposal, locals_[block], var_forward)
        )
        if math.log(rng.random()) <= log_ratio:
            locals_ = locals_new
            z = z_new
            matching = result.matching
            sq = result.total_cost

    # prior refresh of unmatched compartments (surplus or not-yet-matched)
    unmatched = np.setdiff1d(np.arange(m_total), matching.simulated)
    if unmatched.size and strategy in ("over-sampling", "under-matching"):
        proposal = model.sample_locals(unmatched.size, rng)
        try:
            z_block = model.simulate_compartments(theta_g, proposal, rng)
            calls += unmatched.size
            z_new = z.copy()
            z_new[unmatched] = z_block
            result = _solve_matching(_cost_matrix_raw(y, z_new), strategy, n_matched)
            solves += 1
            # independence proposal from the prior: the prior and proposal
            # terms cancel, leaving the in-ball indicator
            if result.total_cost <= eps_sq:
                locals_ = locals_.copy()
                locals_[unmatched] = proposal
                z = z_new
                matching = result.matching
                sq = result.total_cost
        except SimulationFailure:
            calls += unmatched.size

    return (
        Particle(
            theta=ParameterVector(theta_g, locals_),
            z=z,
            matching=matching,
            sq_distance=sq,
            alive=True,
        ),
        calls,
        solves,
    )


class PermABCSMC(BaseEstimator):
    """Sequential permutation-matched ABC sampler.

    Parameters
    ----------
    model : Model
        Generative model providing priors and the simulator.
    n_particles : int
        Population size.
    strategy : str
        One of ``"epsilon-descent"``, ``"over-sampling"``,
        ``"under-matching"``.
    target_epsilon : float
        Descent stops once the adaptive tolerance reaches this value
        (epsilon-descent only); 0 never stops on tolerance, ending the run
        on degeneracy, stall, or budget instead.
    alpha : float
        Quantile used for the adaptive tolerance descent.
    gamma : float
        Decay of the compartment-count schedules.
    calibration_quantile : float
        Initial-population quantile fixing the tolerance of the
        over-sampling and under-matching runs.
    m_initial, l_initial : int
        Schedule start points (required by their strategies).
    duplication : int
        Candidate count of the over-sampling shrink re-test.
    n_blocks : int or None
        Gibbs blocks per rejuvenation sweep; default ``min(K, 5)``.
    unique_rate_floor : float
        Stop when the unique-particle rate falls below this.
    budget_cap : int
        Maximum number of per-compartment simulator calls.
    max_iterations : int
        Hard iteration cap.
    random_state : int
        Seed; fully determines all randomness.
    move_passes : int
        Rejuvenation sweeps applied to each particle per iteration. One
        sweep is the default; fixed-tolerance schedules with aggressive
        compartment-count transitions benefit from several.
    n_threads : int
        Worker threads for the rejuvenation sweeps; never affects results.
    record_snapshots : bool or None
        Keep per-iteration aligned parameter snapshots; default on for
        over-sampling runs only.

    Attributes
    ----------
    population_ : list of Particle
    global_samples_ : ndarray (n_particles, d_glob)
    local_samples_ : ndarray (n_particles, K, d_loc)
        Aligned by observed slot (the projection step).
    distances_, epsilon_, trace_, status_, snapshots_,
    n_simulations_, n_assignment_solves_
    """

    def __init__(
        self,
        model=None,
        n_particles=1000,
        strategy="epsilon-descent",
        target_epsilon=0.0,
        alpha=0.75,
        gamma=0.9,
        calibration_quantile=0.95,
        m_initial=None,
        l_initial=None,
        duplication=5,
        n_blocks=None,
        unique_rate_floor=0.02,
        budget_cap=10_000_000,
        max_iterations=1000,
        move_passes=1,
        random_state=0,
        n_threads=1,
        record_snapshots=None,
    ):
        self.model = model
        self.n_particles = n_particles
        self.strategy = strategy
        self.target_epsilon = target_epsilon
        self.alpha = alpha
        self.gamma = gamma
        self.calibration_quantile = calibration_quantile
        self.m_initial = m_initial
        self.l_initial = l_initial
        self.duplication = duplication
        self.n_blocks = n_blocks
        self.unique_rate_floor = unique_rate_floor
        self.budget_cap = budget_cap
        self.max_iterations = max_iterations
        self.move_passes = move_passes
        self.random_state = random_state
        self.n_threads = n_threads
        self.record_snapshots = record_snapshots

    # -- initialization ---------------------------------------------------

    def _validate(self, k: int):
        if self.model is None:
            raise ConfigurationError("a model is required")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        if self.n_particles < 2:
            raise ConfigurationError("need at least 2 particles")
        if self.strategy == "over-sampling":
            if self.m_initial is None or self.m_initial <= k:
                raise ConfigurationError(
                    "over-sampling requires m_initial greater than the number of "
                    "observed compartments"
                )
        if self.strategy == "under-matching":
            if self.l_initial is None or not 1 <= self.l_initial < k:
                raise ConfigurationError(
                    "under-matching requires 1 <= l_initial < the number of "
                    "observed compartments"
                )
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not 0 < self.calibration_quantile <= 1:
            raise ConfigurationError("calibration_quantile must lie in (0, 1]")
        if self.duplication < 1:
            raise ConfigurationError("duplication count must be at least 1")
        if self.move_passes < 1:
            raise ConfigurationError("move_passes must be at least 1")

    def init_population(self, y):
        """Prior population plus the calibrated tolerance for the schedule.

        For the fixed-tolerance schedules the tolerance is the
        ``calibration_quantile`` order statistic of the initial optimal
        matched distances; for epsilon-descent it is infinite and every
        particle starts alive. Returns ``(population, epsilon, calls,
        solves)``.
        """
        y = as_observed_data(y)
        k = y.n_compartments
        self._validate(k)
        m0 = self.m_initial if self.strategy == "over-sampling" else k
        n_matched = self.l_initial if self.strategy == "under-matching" else k
        population = []
        calls = 0
        solves = 0
        for i in range(self.n_particles):
            rng = substream(self.random_state, _TAG_INIT, 0, i)
            theta = self.model.sample_prior(m0, rng)
            try:
                z = self.model.simulate_compartments(
                    theta.global_block, theta.local_blocks, rng
                )
                calls += m0
            except SimulationFailure:
                calls += m0
                population.append(
                    Particle(theta, np.full((m0, y.n_obs), np.inf), Matching.identity(0), np.inf, alive=False)
                )
                continue
            result = _solve_matching(_cost_matrix_raw(y, z), self.strategy, n_matched)
            solves += 1
            population.append(
                Particle(theta, z, result.matching, result.total_cost, alive=True)
            )
        if self.strategy == "epsilon-descent":
            epsilon = np.inf
        else:
            finite = [p.distance for p in population if np.isfinite(p.sq_distance)]
            if not finite:
                raise ExtinctionError("every initial simulation failed")
            epsilon = order_statistic(finite, self.calibration_quantile)
            for p in population:
                p.alive = np.isfinite(p.sq_distance) and p.sq_distance <= epsilon**2
        return population, epsilon, calls, solves

    # -- bookkeeping --------------------------------------------------------

    def _aligned_locals(self, particle, k):
        out = np.full((k, self.model.d_loc), np.nan)
        sel = particle.matching.observed < k
        out[particle.matching.observed[sel]] = particle.theta.local_blocks[
            particle.matching.simulated[sel]
        ]
        return out

    def _snapshot(self, population, k, iteration, m_or_l, epsilon):
        alive = [p for p in population if p.alive]
        return {
            "iteration": iteration,
            "m_or_l": m_or_l,
            "epsilon": epsilon,
            "global": np.array([p.theta.global_block for p in alive]),
            "locals": np.array([self._aligned_locals(p, k) for p in alive]),
        }

    def _trace_row(self, population, iteration, epsilon, m_or_l, calls, solves, t0):
        alive = [p for p in population if p.alive]
        rate = (
            unique_particle_rate([p.theta for p in alive]) * len(alive) / len(population)
            if alive
            else 0.0
        )
        return TraceRow(
            iteration=iteration,
            epsilon=float(epsilon),
            m_or_l=int(m_or_l),
            alive_count=len(alive),
            unique_particle_rate=rate,
            simulator_calls=calls,
            assignment_solves=solves,
            wall_time_seconds=time.perf_counter() - t0,
        )

    # -- main loop ----------------------------------------------------------

    def fit(self, y):
        """Run the sequential sampler on observed data ``y``."""
        t0 = time.perf_counter()
        y = as_observed_data(y)
        k = y.n_compartments
        population, epsilon, calls, solves = self.init_population(y)
        h = self.n_blocks if self.n_blocks is not None else min(k, 5)
        snapshots_on = (
            self.record_snapshots
            if self.record_snapshots is not None
            else self.strategy == "over-sampling"
        )
        m_current = self.m_initial if self.strategy == "over-sampling" else k
        l_current = self.l_initial if self.strategy == "under-matching" else k
        m_or_l = m_current if self.strategy == "over-sampling" else l_current

        trace = [self._trace_row(population, 0, epsilon, m_or_l, calls, solves, t0)]
        snapshots = []
        if snapshots_on:
            snapshots.append(self._snapshot(population, k, 0, m_or_l, epsilon))
        status = "stall"  # overwritten unless the iteration cap is hit

        for t in range(1, self.max_iterations + 1):
            terminal = False
            if self.strategy == "epsilon-descent":
                alive_d = [p.distance for p in population if p.alive]
                eps_next = adapt_epsilon(alive_d, self.alpha)
                if eps_next <= self.target_epsilon:
                    eps_next = self.target_epsilon
                    terminal = True
                if eps_next >= epsilon:
                    status = "stall"
                    break
                epsilon = eps_next
                eps_sq = epsilon**2
                for p in population:
                    if p.alive and p.sq_distance > eps_sq:
                        p.alive = False
            elif self.strategy == "over-sampling":
                if m_current == k:
                    status = "success"
                    break
                m_next = next_m(k, m_current, self.gamma)
                terminal = m_next == k
                eps_sq = epsilon**2
                for i, p in enumerate(population):
                    if not p.alive:
                        continue
                    rng = substream(self.random_state, _TAG_DUP, t, i)
                    survivor, used = duplicate_for_transition(
                        p, y, m_next, self.duplication, eps_sq, rng
                    )
                    solves += used
                    if survivor is None:
                        p.alive = False
                    else:
                        population[i] = survivor
                m_current = m_next
                m_or_l = m_current
            else:  # under-matching
                if l_current == k:
                    status = "success"
                    break
                l_next = next_l(k, l_current, self.gamma)
                terminal = l_next == k
                eps_sq = epsilon**2
                for p in population:
                    if not p.alive:
                        continue
                    result = _solve_matching(
                        _cost_matrix_raw(y, p.z), self.strategy, l_next
                    )
                    solves += 1
                    if result.total_cost <= eps_sq:
                        p.matching = result.matching
                        p.sq_distance = result.total_cost
                    else:
                        p.alive = False
                l_current = l_next
                m_or_l = l_current

            if not any(p.alive for p in population):
                raise ExtinctionError(
                    f"population went extinct at iteration {t}", trace=trace
                )

            resample_rng = substream(self.random_state, _TAG_RESAMPLE, t)
            population = systematic_resample(population, self.n_particles, resample_rng)
            n_matched = l_current if self.strategy == "under-matching" else k
            min_matched = max(2, math.ceil(0.1 * self.n_particles))
            state = compute_kernel_state(population, k, h, min_matched)
            eps_sq = epsilon**2

            def move_one(i, _state=state, _eps_sq=eps_sq, _t=t, _n_matched=n_matched):
                particle = population[i]
                used_calls = 0
                used_solves = 0
                for sweep in range(self.move_passes):
                    rng = substream(self.random_state, _TAG_MOVE, _t, sweep, i)
                    particle, c, s = move_particle(
                        particle, y, _eps_sq, _state, self.strategy, _n_matched,
                        self.model, rng,
                    )
                    used_calls += c
                    used_solves += s
                return particle, used_calls, used_solves

            if self.n_threads and self.n_threads > 1:
                with ThreadPoolExecutor(max_workers=self.n_threads) as pool:
                    moved = list(pool.map(move_one, range(self.n_particles)))
            else:
                moved = [move_one(i) for i in range(self.n_particles)]
            population = [m[0] for m in moved]
            calls += sum(m[1] for m in moved)
            solves += sum(m[2] for m in moved)

            row = self._trace_row(population, t, epsilon, m_or_l, calls, solves, t0)
            trace.append(row)
            if snapshots_on:
                snapshots.append(self._snapshot(population, k, t, m_or_l, epsilon))

            if terminal:
                status = "success"
                break
            if row.unique_particle_rate < self.unique_rate_floor:
                status = "stall"
                break
            if calls >= self.budget_cap:
                status = "budget-exceeded"
                break
        else:
            status = "stall"

        self.population_ = population
        self.epsilon_ = float(epsilon)
        self.status_ = status
        self.trace_ = trace
        self.snapshots_ = snapshots
        self.n_simulations_ = calls
        self.n_assignment_solves_ = solves
        alive = [p for p in population if p.alive]
        self.global_samples_ = np.array([p.theta.global_block for p in alive])
        self.local_samples_ = np.array([self._aligned_locals(p, k) for p in alive])
        self.distances_ = np.array([p.distance for p in alive])
        self.unique_rate_ = trace[-1].unique_particle_rate
        return self
