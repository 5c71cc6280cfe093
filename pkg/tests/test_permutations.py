"""Tests for derangement counting and the stratified permutation proposal."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from permabc import (
    Matching,
    StratifiedProposal,
    partial_derangement_count,
    sample_from_stratum,
    subfactorial,
)


class TestSubfactorial:
    def test_base_cases(self):
        assert subfactorial(0) == 1
        assert subfactorial(1) == 0

    def test_small_values_against_enumeration(self):
        for n in range(2, 7):
            count = sum(
                1
                for p in itertools.permutations(range(n))
                if all(p[i] != i for i in range(n))
            )
            assert subfactorial(n) == count

    def test_rounding_identity(self):
        # !n is the nearest integer to n!/e
        for n in range(1, 15):
            assert subfactorial(n) == round(math.factorial(n) / math.e)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            subfactorial(-1)


class TestPartialDerangementCount:
    def test_zero_moves_is_one(self):
        assert partial_derangement_count(5, 0) == 1

    def test_one_move_is_empty(self):
        assert partial_derangement_count(5, 1) == 0

    def test_three_choose_two(self):
        assert partial_derangement_count(3, 2) == 3

    def test_shells_partition_the_symmetric_group(self):
        for k in range(2, 9):
            total = sum(partial_derangement_count(k, n) for n in range(k + 1))
            assert total == math.factorial(k)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            partial_derangement_count(3, 4)


class TestSampleFromStratum:
    def test_zero_returns_base(self, rng):
        base = Matching.from_permutation([2, 0, 1])
        out = sample_from_stratum(3, 0, base, rng)
        assert list(out.permutation()) == [2, 0, 1]

    def test_full_swap_for_two(self, rng):
        base = Matching.identity(2)
        for _ in range(20):
            out = sample_from_stratum(2, 2, base, rng)
            assert list(out.permutation()) == [1, 0]

    def test_hamming_distance_is_exact(self, rng):
        base = Matching.identity(6)
        for n in (0, 2, 3, 4, 5, 6):
            for _ in range(20):
                out = sample_from_stratum(6, n, base, rng)
                assert base.hamming(out) == n

    def test_one_is_rejected(self, rng):
        with pytest.raises(ValueError):
            sample_from_stratum(4, 1, Matching.identity(4), rng)

    def test_uniform_over_shell(self, rng):
        # K=4, n=3: the shell has C(4,3) * !3 = 8 members
        base = Matching.identity(4)
        counts = {}
        draws = 20000
        for _ in range(draws):
            key = tuple(sample_from_stratum(4, 3, base, rng).permutation())
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 8
        chi2 = sum((c - draws / 8) ** 2 / (draws / 8) for c in counts.values())
        assert stats.chi2.sf(chi2, df=7) > 0.01


class TestStratifiedProposal:
    def test_base_mass_is_shifted_poisson_at_one(self):
        prop = StratifiedProposal(n_compartments=4, rate=1.0)
        base = Matching.identity(4)
        assert prop.density(base, base) == pytest.approx(prop.shift_pmf(1))

    def test_transposition_mass(self):
        prop = StratifiedProposal(n_compartments=3, rate=1.0)
        base = Matching.identity(3)
        swap = Matching.from_permutation([1, 0, 2])
        assert prop.density(swap, base) == pytest.approx(prop.shift_pmf(2) / 3)

    @pytest.mark.parametrize("k", [3, 4, 5])
    def test_density_sums_to_one(self, k):
        prop = StratifiedProposal(n_compartments=k, rate=1.3)
        base = Matching.identity(k)
        total = sum(
            prop.density(Matching.from_permutation(p), base)
            for p in itertools.permutations(range(k))
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_stratum_densities_normalize_and_mix(self):
        prop = StratifiedProposal(n_compartments=5, rate=0.8)
        base = Matching.identity(5)
        mixture_total = 0.0
        for h in range(1, prop.n_strata + 1):
            in_stratum = sum(
                prop.stratum_density(Matching.from_permutation(p), base, h)
                for p in itertools.permutations(range(5))
            )
            assert in_stratum == pytest.approx(1.0, abs=1e-12)
            mixture_total += prop.stratum_weight(h)
        assert mixture_total == pytest.approx(1.0, abs=1e-12)

    def test_sample_never_lands_at_hamming_one(self, rng):
        prop = StratifiedProposal(n_compartments=4)
        base = Matching.identity(4)
        for _ in range(500):
            assert base.hamming(prop.sample(base, rng)) != 1

    def test_small_rate_concentrates_on_base(self, rng):
        prop = StratifiedProposal(n_compartments=4, rate=1e-9)
        base = Matching.identity(4)
        hits = sum(
            base.hamming(prop.sample(base, rng)) == 0 for _ in range(200)
        )
        assert hits == 200

    def test_empirical_law_matches_density(self, rng):
        prop = StratifiedProposal(n_compartments=3, rate=1.0)
        base = Matching.identity(3)
        draws = 30000
        counts = {}
        for _ in range(draws):
            key = tuple(prop.sample(base, rng).permutation())
            counts[key] = counts.get(key, 0) + 1
        chi2 = 0.0
        for p in itertools.permutations(range(3)):
            expected = prop.density(Matching.from_permutation(p), base) * draws
            chi2 += (counts.get(tuple(p), 0) - expected) ** 2 / expected
        assert stats.chi2.sf(chi2, df=5) > 0.01

    def test_first_stratum_count_must_be_one(self):
        with pytest.raises(ValueError):
            StratifiedProposal(n_compartments=4, perms_per_stratum=(2, 5, 5, 5))
