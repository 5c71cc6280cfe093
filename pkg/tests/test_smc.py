"""Tests for the sequential engine: schedules, resampling, kernel, runs."""

import math

import numpy as np
import pytest

from permabc import (
    ExtinctionError,
    Matching,
    ObservedData,
    ParameterVector,
    Particle,
    PermABCSMC,
    adapt_epsilon,
    compute_kernel_state,
    duplicate_for_transition,
    move_particle,
    next_l,
    next_m,
    systematic_resample,
)
from permabc.models import GaussianHierarchy, RidgeGaussian, UniformToy
from permabc.smc import order_statistic
from permabc.streams import substream


def make_particle(beta, mus, z, matching=None, sq=0.0, alive=True):
    mus = np.atleast_2d(np.asarray(mus, dtype=float).reshape(-1, 1))
    z = np.asarray(z, dtype=float)
    if matching is None:
        matching = Matching.identity(z.shape[0])
    return Particle(
        theta=ParameterVector(np.atleast_1d(beta), mus),
        z=z,
        matching=matching,
        sq_distance=sq,
        alive=alive,
    )


class TestSchedules:
    def test_next_m_formula(self):
        assert next_m(10, 50, 0.9) == 46
        assert next_m(10, 11, 0.9) == 10
        assert next_m(10, 12, 0.99) == 11  # the minus-one cap forces progress

    def test_next_l_formula(self):
        assert next_l(10, 4, 0.8) == 5
        assert next_l(10, 9, 0.8) == 10
        assert next_l(10, 4, 0.99) == 5  # the plus-one floor forces progress

    def test_schedules_terminate(self):
        m = 150
        steps = 0
        while m > 10:
            m = next_m(10, m, 0.9)
            steps += 1
        assert m == 10 and steps < 60
        l = 3
        while l < 20:
            l = next_l(20, l, 0.8)
        assert l == 20

    def test_epsilon_quantiles(self):
        assert order_statistic([1, 2, 3, 4, 5], 0.6) == 3
        assert adapt_epsilon([1, 2, 3, 4], 0.5) == 2
        assert adapt_epsilon([0.1, 0.2, 0.3, 0.4], 0.75) == 0.3
        assert adapt_epsilon([5.0, 1.0, 3.0], 1.0) == 5.0


class TestResampling:
    def _population(self, flags):
        return [
            make_particle(float(i), [float(i)], [[float(i)]], alive=a)
            for i, a in enumerate(flags)
        ]

    def test_all_alive_preserves_size(self, rng):
        pop = self._population([True] * 8)
        out = systematic_resample(pop, 8, rng)
        assert len(out) == 8

    def test_single_survivor_copied_everywhere(self, rng):
        pop = self._population([False, True, False])
        out = systematic_resample(pop, 6, rng)
        assert len(out) == 6
        assert all(p.theta.global_block[0] == 1.0 for p in out)

    def test_half_alive_gives_exactly_two_copies_each(self, rng):
        pop = self._population([True, True, False, False])
        out = systematic_resample(pop, 4, rng)
        values = sorted(p.theta.global_block[0] for p in out)
        assert values == [0.0, 0.0, 1.0, 1.0]

    def test_dead_never_copied(self, rng):
        pop = self._population([True, False, True, False, True])
        out = systematic_resample(pop, 10, rng)
        assert all(p.theta.global_block[0] in (0.0, 2.0, 4.0) for p in out)

    def test_copies_are_independent(self, rng):
        pop = self._population([True])
        out = systematic_resample(pop, 2, rng)
        out[0].theta.local_blocks[0, 0] = 99.0
        assert out[1].theta.local_blocks[0, 0] != 99.0

    def test_extinct_population_raises(self, rng):
        with pytest.raises(ExtinctionError):
            systematic_resample(self._population([False, False]), 2, rng)


class TestKernelState:
    def test_twice_population_variance(self):
        pop = [
            make_particle(0.0, [1.0, 3.0], [[0.0], [0.0]]),
            make_particle(2.0, [2.0, 5.0], [[0.0], [0.0]]),
        ]
        state = compute_kernel_state(pop, n_slots=2, n_blocks=2, min_matched=2)
        assert state.global_var[0] == pytest.approx(2.0)  # 2 * var({0, 2})
        assert state.local_var[0, 0] == pytest.approx(0.5)
        assert state.local_var[1, 0] == pytest.approx(2.0)

    def test_identical_particles_fall_back_to_unit(self):
        pop = [make_particle(1.0, [2.0], [[0.0]]) for _ in range(4)]
        state = compute_kernel_state(pop, n_slots=1, n_blocks=1, min_matched=2)
        assert state.global_var[0] == 1.0
        assert state.local_var[0, 0] == 1.0
        assert state.fallback_var[0] == 1.0

    def test_fallback_is_max_over_matched_slots(self):
        pop = [
            make_particle(0.0, [0.0, 0.0], [[0.0], [0.0]]),
            make_particle(1.0, [1.0, 2.0], [[0.0], [0.0]]),
        ]
        state = compute_kernel_state(pop, n_slots=2, n_blocks=2, min_matched=2)
        assert state.fallback_var[0] == pytest.approx(max(0.5, 2.0))

    def test_rarely_matched_slot_uses_fallback(self):
        # slot 1 matched in a single particle only
        pop = [
            make_particle(0.0, [0.0], np.zeros((1, 1)), Matching([0], [0])),
            make_particle(1.0, [4.0], np.zeros((1, 1)), Matching([0], [0])),
            make_particle(2.0, [9.0], np.zeros((1, 1)), Matching([1], [0])),
        ]
        state = compute_kernel_state(pop, n_slots=2, n_blocks=1, min_matched=2)
        assert state.local_var[1, 0] == state.fallback_var[0]


class TestDuplication:
    def test_identity_candidate_keeps_matching_within_prefix(self, rng):
        y = ObservedData([[0.0], [1.0]])
        z = np.array([[0.05], [1.05], [9.0]])
        cost = ((y.compartments[:, None, 0] - z[None, :, 0]) ** 2)
        particle = make_particle(0.0, [0.0, 1.0, 9.0], z,
                                 Matching([0, 1], [0, 1]), sq=cost[0, 0] + cost[1, 1])
        survivor, solves = duplicate_for_transition(
            particle, y, 2, 1, eps_sq=1.0, rng=rng
        )
        assert survivor is not None
        assert solves == 1
        assert survivor.z.shape == (2, 1)
        assert survivor.sq_distance == pytest.approx(particle.sq_distance)

    def test_particle_dies_when_all_candidates_fail(self, rng):
        y = ObservedData([[0.0], [1.0]])
        z = np.array([[50.0], [60.0], [0.0]])
        particle = make_particle(0.0, [50.0, 60.0, 0.0], z, Matching([0, 1], [0, 1]), sq=0.0)
        survivor, _ = duplicate_for_transition(particle, y, 2, 1, eps_sq=0.01, rng=rng)
        assert survivor is None

    def test_random_candidates_can_rescue(self, rng):
        y = ObservedData([[0.0], [1.0]])
        # the matching needs compartment 2, which truncation would drop
        z = np.array([[9.0], [0.01], [1.01]])
        particle = make_particle(0.0, [9.0, 0.0, 1.0], z, Matching([0, 1], [1, 2]), sq=0.0)
        dead, _ = duplicate_for_transition(particle, y, 2, 1, eps_sq=0.1, rng=rng)
        assert dead is None
        rescued = 0
        for i in range(50):
            survivor, _ = duplicate_for_transition(
                particle, y, 2, 8, eps_sq=0.1, rng=np.random.default_rng(i)
            )
            rescued += survivor is not None
        assert rescued > 25


class TestMoveParticle:
    def _setup(self, eps_scale=4.0):
        model = GaussianHierarchy(n_obs=5)
        rng = substream(77, 1)
        truth = model.sample_prior(3, rng)
        y = ObservedData(model.simulate_compartments(truth.global_block, truth.local_blocks, rng))
        fit = PermABCSMC(model=model, n_particles=50, strategy="epsilon-descent",
                         target_epsilon=eps_scale, random_state=13).fit(y)
        return model, y, fit

    def test_move_preserves_ball_membership(self):
        model, y, fit = self._setup()
        eps_sq = fit.epsilon_**2
        state = compute_kernel_state(fit.population_, 3, 3, 2)
        for i, p in enumerate(fit.population_[:20]):
            moved, calls, solves = move_particle(
                p, y, eps_sq, state, "epsilon-descent", 3, model, substream(1, 5, i)
            )
            assert moved.sq_distance <= eps_sq + 1e-12
            assert calls >= 0 and solves >= 1

    def test_accounting_on_full_support_model(self, rng):
        """With priors supported everywhere, one sweep simulates every
        compartment twice: once globally, once across the local blocks."""
        model = RidgeGaussian(n_obs=1)
        k = 4
        truth = model.sample_prior(k, rng)
        y = ObservedData(model.simulate_compartments(truth.global_block, truth.local_blocks, rng))
        z = model.simulate_compartments(truth.global_block, truth.local_blocks, rng)
        from permabc.distance import cost_matrix as cm
        from permabc import SimulatedData, solve_full

        res = solve_full(cm(y, SimulatedData(z)))
        particle = Particle(theta=truth, z=z, matching=res.matching,
                            sq_distance=res.total_cost)
        state = compute_kernel_state(
            [particle, Particle(theta=model.sample_prior(k, rng), z=z,
                                matching=res.matching, sq_distance=res.total_cost)],
            k, 2, 2,
        )
        _, calls, solves = move_particle(
            particle, y, np.inf, state, "epsilon-descent", k, model, rng
        )
        assert calls == 2 * k
        assert solves == 1 + 2  # one global, one per block

    def test_null_proposals_on_deterministic_model_keep_state(self, rng):
        """Zero proposal variance on a deterministic simulator is a no-op."""
        from permabc import SimulatedData, solve_full
        from permabc.distance import cost_matrix as cm
        from permabc.models import SIRModel
        from permabc.smc import KernelState

        model = SIRModel(horizon=15)
        truth = model.sample_prior(2, rng)
        z = model.simulate_compartments(truth.global_block, truth.local_blocks, rng)
        y = ObservedData(z.copy())
        res = solve_full(cm(y, SimulatedData(z)))
        particle = Particle(theta=truth, z=z, matching=res.matching, sq_distance=res.total_cost)
        tiny = 1e-30
        state = KernelState(
            global_var=np.full(1, tiny),
            local_var=np.full((2, 3), tiny),
            fallback_var=np.full(3, tiny),
            n_blocks=2,
        )
        moved, _, _ = move_particle(particle, y, 1e-6, state, "epsilon-descent", 2, model, rng)
        assert np.allclose(moved.theta.global_block, truth.global_block, atol=1e-12)
        assert np.allclose(moved.theta.local_blocks, truth.local_blocks, atol=1e-9)
        assert moved.sq_distance <= 1e-6


class TestRuns:
    def _data(self, k=3, seed=5, n_obs=8):
        model = GaussianHierarchy(n_obs=n_obs)
        rng = substream(seed, 9)
        truth = model.sample_prior(k, rng)
        y = ObservedData(model.simulate_compartments(truth.global_block, truth.local_blocks, rng))
        return model, y

    def test_descent_reaches_target_and_projects(self):
        model, y = self._data()
        fit = PermABCSMC(model=model, n_particles=120, strategy="epsilon-descent",
                         target_epsilon=10.0, random_state=21).fit(y)
        assert fit.status_ == "success"
        assert fit.epsilon_ == 10.0
        assert fit.local_samples_.shape == (120, 3, 1)
        assert not np.any(np.isnan(fit.local_samples_))
        for p in fit.population_:
            assert p.matching.is_full(3)
            assert p.sq_distance <= 100.0 + 1e-9

    def test_every_alive_particle_satisfies_criterion_each_iteration(self):
        model, y = self._data()
        fit = PermABCSMC(model=model, n_particles=80, strategy="epsilon-descent",
                         target_epsilon=7.0, random_state=22).fit(y)
        from permabc import SimulatedData, solve_full
        from permabc.distance import cost_matrix as cm

        for p in fit.population_:
            re_solved = solve_full(cm(y, SimulatedData(p.z)))
            assert re_solved.total_cost == pytest.approx(p.sq_distance, rel=1e-9)

    def test_trace_counters_monotone(self):
        model, y = self._data()
        fit = PermABCSMC(model=model, n_particles=60, strategy="epsilon-descent",
                         target_epsilon=8.0, random_state=23).fit(y)
        sims = [r.simulator_calls for r in fit.trace_]
        solves = [r.assignment_solves for r in fit.trace_]
        assert all(a <= b for a, b in zip(sims, sims[1:]))
        assert all(a <= b for a, b in zip(solves, solves[1:]))

    def test_over_sampling_schedule_descends_to_k(self):
        model, y = self._data(k=3)
        fit = PermABCSMC(model=model, n_particles=80, strategy="over-sampling",
                         m_initial=10, random_state=24).fit(y)
        assert fit.status_ == "success"
        ms = [r.m_or_l for r in fit.trace_]
        assert ms[0] == 10 and ms[-1] == 3
        assert all(a > b for a, b in zip(ms, ms[1:]))
        assert len(fit.snapshots_) == len(fit.trace_)

    def test_under_matching_schedule_ascends_to_k(self):
        model, y = self._data(k=3)
        fit = PermABCSMC(model=model, n_particles=200, strategy="under-matching",
                         l_initial=2, gamma=0.8, random_state=25).fit(y)
        assert fit.status_ == "success"
        ls = [r.m_or_l for r in fit.trace_]
        assert ls[0] == 2 and ls[-1] == 3
        assert fit.trace_[-1].epsilon == fit.trace_[0].epsilon  # tolerance fixed

    def test_um_terminal_criterion_equals_full_matching(self):
        model, y = self._data(k=3)
        fit = PermABCSMC(model=model, n_particles=200, strategy="under-matching",
                         l_initial=2, gamma=0.8, random_state=26).fit(y)
        assert fit.status_ == "success"
        for p in fit.population_:
            assert p.matching.is_full(3)

    def test_um_small_population_on_hard_transition_goes_extinct(self):
        model, y = self._data(k=4)
        with pytest.raises(ExtinctionError) as err:
            PermABCSMC(model=model, n_particles=80, strategy="under-matching",
                       l_initial=2, gamma=0.8, random_state=25).fit(y)
        assert len(err.value.trace) >= 1

    def test_move_passes_multiply_sweep_accounting(self, rng):
        model = RidgeGaussian(n_obs=1)
        k = 3
        truth = model.sample_prior(k, rng)
        y = ObservedData(model.simulate_compartments(truth.global_block, truth.local_blocks, rng))
        fits = [
            PermABCSMC(model=model, n_particles=40, strategy="epsilon-descent",
                       target_epsilon=5.0, max_iterations=3, move_passes=p,
                       random_state=33).fit(y)
            for p in (1, 2)
        ]
        # priors have full support, so each sweep costs exactly 2K calls/particle
        for fit, passes in zip(fits, (1, 2)):
            per_iter = fit.trace_[1].simulator_calls - fit.trace_[0].simulator_calls
            assert per_iter == passes * 40 * 2 * k

    def test_calibration_quantile_controls_initial_survival(self):
        model, y = self._data(k=3)
        smc = PermABCSMC(model=model, n_particles=200, strategy="over-sampling",
                         m_initial=6, calibration_quantile=0.5, random_state=27)
        population, epsilon, _, _ = smc.init_population(y)
        alive = sum(p.alive for p in population)
        assert alive == 100
        distances = sorted(p.distance for p in population)
        assert epsilon == pytest.approx(distances[99])

    def test_thread_count_never_changes_results(self):
        model, y = self._data(k=3)
        fits = [
            PermABCSMC(model=model, n_particles=60, strategy="epsilon-descent",
                       target_epsilon=7.0, random_state=31, n_threads=t).fit(y)
            for t in (1, 3)
        ]
        assert np.array_equal(fits[0].global_samples_, fits[1].global_samples_)
        assert np.array_equal(fits[0].local_samples_, fits[1].local_samples_)

    def test_unreachable_target_stalls_gracefully(self):
        model, y = self._data(k=2, n_obs=10)
        fit = PermABCSMC(model=model, n_particles=40, strategy="epsilon-descent",
                         target_epsilon=1e-6, random_state=32, max_iterations=60).fit(y)
        assert fit.status_ in ("stall", "budget-exceeded")
        assert len(fit.trace_) >= 2
