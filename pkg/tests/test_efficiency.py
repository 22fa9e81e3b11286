import math

import numpy as np
import pytest

from entrometer import efficiency, entropy
from entrometer.efficiency import (
    BoundCache,
    classify_interval,
    complete_block_length,
    degree_of_inefficiency,
    evaluate_simple_strategy,
    mc_entropy_bound,
    _strategy_counts,
)
from entrometer.errors import InsufficientDataError


class TestCompleteBlockLength:
    def test_matches_sequence_selector(self, rng):
        for l in (50, 700, 2000, 9999):
            for a in (3, 4):
                symbols = rng.integers(0, a, size=l).astype(np.int8)
                seq = entropy.SymbolSequence(symbols, a)
                assert complete_block_length(l, a) == entropy.select_block_length(seq)


class TestMcEntropyBound:
    def test_percentile_rank_definition(self):
        n_sim = 200
        bound = mc_entropy_bound(600, 4, n_sim=n_sim, seed=5)
        rates = efficiency._replicate_entropies(600, 4, n_sim, seed=5)
        assert bound.bound == float(np.sort(rates)[math.ceil(0.01 * n_sim) - 1])

    def test_bound_below_maximal_rate(self):
        bound = mc_entropy_bound(800, 3, n_sim=300, seed=1)
        assert 0.0 < bound.bound < 1.0

    def test_bit_reproducible(self):
        a = mc_entropy_bound(500, 4, n_sim=300, seed=9)
        b = mc_entropy_bound(500, 4, n_sim=300, seed=9)
        assert a.bound == b.bound

    def test_chunking_does_not_change_result(self, monkeypatch):
        base = efficiency._replicate_entropies(400, 4, 150, seed=3)
        monkeypatch.setattr(efficiency, "_CHUNK", 37)
        chunked = efficiency._replicate_entropies(400, 4, 150, seed=3)
        np.testing.assert_array_equal(base, chunked)

    def test_longer_sequences_tighten_the_bound(self):
        lo = mc_entropy_bound(2000, 4, n_sim=2000, seed=11)
        hi = mc_entropy_bound(8000, 4, n_sim=2000, seed=11)
        assert hi.bound > lo.bound


class TestBoundCache:
    def test_exact_mode_recomputes_per_length(self):
        cache = BoundCache(n_sim=150, seed=2)
        a = cache.get(500, 4)
        b = cache.get(510, 4)
        assert a.l == 500 and b.l == 510
        assert cache.get(500, 4) is a

    def test_tolerance_mode_reuses_nearby(self):
        cache = BoundCache(n_sim=150, seed=2, l_tolerance=0.05)
        a = cache.get(500, 4)
        assert cache.get(510, 4) is a
        assert cache.get(900, 4) is not a


class TestClassifyInterval:
    def test_both_rates_above_one_is_efficient(self):
        verdict = classify_interval(1.01, 1.0, 1.02, 1.0)
        assert not verdict.inefficient

    def test_single_discretization_flags(self):
        verdict = classify_interval(1.01, 1.0, 0.99, 1.0)
        assert verdict.inefficient
        assert verdict.rate_4 == pytest.approx(0.99)

    def test_monotone_in_entropy(self, rng):
        for _ in range(50):
            e3, e4 = rng.uniform(0.8, 1.2, 2)
            b3, b4 = rng.uniform(0.9, 1.0, 2)
            v = classify_interval(e3, b3, e4, b4)
            v_up = classify_interval(e3 + 0.05, b3, e4 + 0.05, b4)
            if not v.inefficient:
                assert not v_up.inefficient

    def test_positivity_required(self):
        with pytest.raises(ValueError):
            classify_interval(0.0, 1.0, 1.0, 1.0)


class TestDegree:
    def test_none_inefficient(self):
        verdicts = [classify_interval(1.1, 1.0, 1.1, 1.0) for _ in range(120)]
        assert degree_of_inefficiency(verdicts) == 0.0

    def test_fraction(self):
        bad = [classify_interval(0.9, 1.0, 1.1, 1.0)] * 99
        good = [classify_interval(1.1, 1.0, 1.1, 1.0)] * 21
        assert degree_of_inefficiency(bad + good) == pytest.approx(0.825)

    def test_empty_raises(self):
        with pytest.raises(InsufficientDataError):
            degree_of_inefficiency([])


class TestStrategy:
    def test_constant_symbols_always_win(self):
        symbols = np.ones(400, dtype=np.int8)
        result = _strategy_counts(symbols, 200)
        assert result.group_d == {"111"}
        assert result.group_i == set()
        assert result.fraction == 1.0

    def test_swap_within_direction_groups_is_invariant(self, rng):
        symbols = rng.integers(0, 4, size=4000).astype(np.int8)
        base = _strategy_counts(symbols, 2000)

        swap01 = symbols.copy()
        swap01[symbols == 0] = 1
        swap01[symbols == 1] = 0
        a = _strategy_counts(swap01, 2000)
        assert (a.successes, a.trials) == (base.successes, base.trials)

        swap23 = symbols.copy()
        swap23[symbols == 2] = 3
        swap23[symbols == 3] = 2
        b = _strategy_counts(swap23, 2000)
        assert (b.successes, b.trials) == (base.successes, base.trials)

    def test_blocks_with_missing_are_skipped(self):
        symbols = np.array([1, 1, 1, 1, -1, 1, 1, 1, 1, 1], dtype=np.int8)
        result = _strategy_counts(symbols, 5)
        # second half has exactly two complete blocks (slots 5..8, 6..9)
        assert result.trials == 2

    def test_no_qualified_prefix_gives_zero_trials(self):
        # first half alternates successors evenly: every prefix ties
        symbols = np.array([0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2],
                           dtype=np.int8)
        result = _strategy_counts(symbols, 16)
        assert result.trials == 0
        assert result.fraction is None

    def test_iid_returns_near_half(self, rng):
        returns = rng.standard_normal(30000)
        result = evaluate_simple_strategy(returns)
        assert result.trials > 5000
        assert result.fraction == pytest.approx(0.5, abs=0.05)

    def test_threshold_fitted_on_first_half_only(self, rng):
        # a level shift in the second half lands mostly in the top bin when
        # thresholds come from the first half
        first = rng.standard_normal(2000)
        second = rng.standard_normal(2000) + 10.0
        result = evaluate_simple_strategy(np.concatenate([first, second]))
        # prefix 333 dominates the second half; strategy may or may not
        # qualify it, but the call must not look at second-half quantiles
        sample_sorted = np.sort(first)
        bins = efficiency._bins_against_sample(second, sample_sorted, 4)
        assert (bins == 3).mean() > 0.99

    def test_insufficient_first_half(self):
        with pytest.raises(InsufficientDataError):
            evaluate_simple_strategy(np.array([1.0, 2.0, np.nan, np.nan, 1.0, 2.0]))
