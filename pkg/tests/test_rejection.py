"""Tests for the rejection samplers and the critical-tolerance diagnostic."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from permabc import (
    BudgetExceededError,
    ConfigurationError,
    Matching,
    NotAvailableError,
    ObservedData,
    PermABC,
    SimulatedData,
    StratifiedPermABC,
    VanillaABC,
    critical_epsilon,
    full_distance,
    ks_distance,
)
from permabc.models import UniformToy

TOY_Y = ObservedData(np.array([[-1.0], [1.0]]))


class TestCriticalEpsilon:
    def test_two_point_configuration(self):
        assert critical_epsilon(TOY_Y) == pytest.approx(math.sqrt(2))

    def test_identical_compartments_give_zero(self):
        y = ObservedData([[1.0], [1.0], [3.0]])
        assert critical_epsilon(y) == 0.0

    def test_downweighted_variant(self):
        # uniform weights scale the critical tolerance linearly; at 1/8 the
        # two-point configuration lands on sqrt(1/8)/2
        y = ObservedData(np.array([[-1.0], [1.0]]), weights=[0.125, 0.125])
        assert critical_epsilon(y) == pytest.approx(math.sqrt(1 / 8) / 2)

    def test_single_compartment_rejected(self):
        with pytest.raises(NotAvailableError):
            critical_epsilon(ObservedData([[0.0]]))

    def test_exact_matches_transposition_scan_for_unit_weights(self, rng):
        y = ObservedData(rng.normal(size=(6, 2)))
        exact, is_exact = critical_epsilon(y, return_exact=True)
        bound, is_bound_exact = critical_epsilon(y, exact_limit=3, return_exact=True)
        assert is_exact and not is_bound_exact
        assert bound >= exact - 1e-12

    def test_lemma_uniqueness_small(self, rng):
        """Below the critical tolerance at most one matching is in the ball."""
        for _ in range(200):
            k = int(rng.integers(2, 5))
            y = ObservedData(rng.normal(size=(k, 2)))
            z = SimulatedData(rng.normal(size=(k, 2)))
            eps = 0.99 * critical_epsilon(y)
            hits = sum(
                full_distance(y, z, Matching.from_permutation(p)) <= eps
                for p in itertools.permutations(range(k))
            )
            assert hits <= 1


class TestVanillaABC:
    def test_infinite_tolerance_recovers_prior(self):
        toy = UniformToy()
        fit = VanillaABC(model=toy, n_samples=5000, epsilon=np.inf, random_state=0).fit(TOY_Y)
        assert len(fit.samples_) == 5000
        assert np.all(fit.weights_ == 1.0)
        _, p = ks_distance(fit.local_samples_[:, 0, 0], cdf=lambda x: np.clip((x + 2) / 4, 0, 1))
        assert p > 0.01

    def test_support_geometry_excludes_swapped_ordering(self):
        toy = UniformToy()
        eps = 0.1
        fit = VanillaABC(model=toy, n_samples=500, epsilon=eps, random_state=1,
                         budget_cap=10**8).fit(TOY_Y)
        mu = fit.local_samples_[:, :, 0]
        # acceptance confines each mean to the window of its own observation,
        # never the swapped corner near (1, -1)
        assert np.all(mu[:, 0] <= -1 + 1 + eps + 1e-9)
        assert np.all(mu[:, 1] >= 1 - 1 - eps - 1e-9)
        assert not np.any((mu[:, 0] > 0.5) & (mu[:, 1] < -0.5))

    def test_budget_cap_raises_with_partials(self):
        toy = UniformToy()
        with pytest.raises(BudgetExceededError) as err:
            VanillaABC(model=toy, n_samples=10**6, epsilon=0.05, budget_cap=20_000,
                       random_state=2).fit(TOY_Y)
        assert err.value.n_simulations <= 20_000 + 2
        assert 0 < len(err.value.partial_samples) < 10**6

    def test_distances_within_epsilon(self):
        toy = UniformToy()
        fit = VanillaABC(model=toy, n_samples=300, epsilon=0.4, random_state=3).fit(TOY_Y)
        assert np.all(fit.distances_ <= 0.4)

    def test_simulations_used_monotone(self):
        toy = UniformToy()
        fit = VanillaABC(model=toy, n_samples=100, epsilon=0.5, random_state=4).fit(TOY_Y)
        used = [s.simulations_used for s in fit.samples_]
        assert all(a < b for a, b in zip(used, used[1:]))
        assert used[-1] <= fit.n_simulations_


class TestPermABC:
    def test_acceptance_never_exceeds_epsilon(self):
        toy = UniformToy()
        fit = PermABC(model=toy, n_samples=400, epsilon=0.3, random_state=5).fit(TOY_Y)
        assert np.all(fit.distances_ <= 0.3)

    def test_alignment_orders_output(self):
        toy = UniformToy()
        fit = PermABC(model=toy, n_samples=2000, epsilon=np.inf, random_state=6).fit(TOY_Y)
        mu = fit.local_samples_[:, :, 0]
        # aligned first slot tracks the smaller observation
        assert np.all(mu[:, 0] <= mu[:, 1] + 2.0)
        assert mu[:, 0].mean() < mu[:, 1].mean()

    def test_directional_agreement_with_vanilla(self, rng):
        """Whenever the identity ordering is in the ball the matched
        acceptance agrees and aligns by the identity."""
        toy = UniformToy()
        eps = 0.99 * critical_epsilon(TOY_Y)
        hits = 0
        for i in range(3000):
            r = np.random.default_rng(i)
            theta = toy.sample_prior(2, r)
            z = toy.simulate(theta, r)
            d_id = full_distance(TOY_Y, z, Matching.identity(2))
            d_swap = full_distance(TOY_Y, z, Matching.from_permutation([1, 0]))
            if d_id <= eps:
                hits += 1
                assert min(d_id, d_swap) <= eps
                assert d_id <= d_swap  # identity is the unique in-ball matching
            if min(d_id, d_swap) <= eps and d_id < d_swap:
                assert d_id <= eps
        assert hits > 0

    def test_efficiency_factor_near_two_for_two_compartments(self):
        toy = UniformToy()
        eps = 0.1 * critical_epsilon(TOY_Y)
        van = VanillaABC(model=toy, n_samples=800, epsilon=eps, random_state=7,
                         budget_cap=10**8).fit(TOY_Y)
        per = PermABC(model=toy, n_samples=800, epsilon=eps, random_state=8,
                      budget_cap=10**8).fit(TOY_Y)
        assert per.n_simulations_ <= 0.6 * van.n_simulations_


class TestStratifiedPermABC:
    def test_requires_epsilon(self):
        with pytest.raises(ConfigurationError):
            StratifiedPermABC(model=UniformToy(), n_samples=10).fit(TOY_Y)

    def test_weights_positive(self):
        fit = StratifiedPermABC(model=UniformToy(), n_samples=200, epsilon=1.0,
                                random_state=9).fit(TOY_Y)
        assert np.all(fit.weights_ > 0)

    def test_constant_weights_below_critical_tolerance(self):
        eps = 0.5 * critical_epsilon(TOY_Y)
        fit = StratifiedPermABC(model=UniformToy(), n_samples=300, epsilon=eps,
                                random_state=10).fit(TOY_Y)
        w = fit.weights_
        assert (w.max() - w.min()) / w.mean() < 1e-12

    def test_infinite_tolerance_weights_are_constant_and_recover_prior(self):
        # with K = 4 strata every shell is covered exactly, so the in-ball
        # count estimate is exact (4! for an infinite ball) on every draw
        y4 = ObservedData(np.array([[-1.5], [-0.5], [0.5], [1.5]]))
        fit = StratifiedPermABC(model=UniformToy(), n_samples=3000, epsilon=np.inf,
                                random_state=11).fit(y4)
        assert np.allclose(fit.weights_, 24.0)
        _, p = ks_distance(fit.local_samples_[:, 2, 0], cdf=lambda x: np.clip((x + 2) / 4, 0, 1))
        assert p > 0.01

    def test_estimator_unbiased_against_enumeration(self):
        """The weight is an unbiased estimate of the in-ball matching count."""
        toy = UniformToy()
        y4 = ObservedData(np.array([[-1.2], [-0.4], [0.4], [1.2]]))
        eps = 1.8  # large enough for several matchings per accepted draw
        fit = StratifiedPermABC(model=toy, n_samples=1500, epsilon=eps,
                                random_state=12).fit(y4)
        diffs = []
        for s in fit.samples_:
            exact = sum(
                full_distance(y4, s.z, Matching.from_permutation(p)) <= eps
                for p in itertools.permutations(range(4))
            )
            diffs.append(s.weight - exact)
        diffs = np.array(diffs)
        se = diffs.std(ddof=1) / math.sqrt(len(diffs))
        assert abs(diffs.mean()) <= 3 * max(se, 1e-12)
