import math

import numpy as np
import pytest

from entrometer import _fold, _fold_py, simlab
from entrometer.volstale import rounding_zero_prob

H1_ANALYTIC = 0.9455305560363264
H2_ANALYTIC = 0.9441867822658373


class TestVariancePath:
    def test_twins_agree(self, rng):
        eps = rng.standard_normal(5000)
        a = np.empty(5000)
        b = np.empty(5000)
        _fold.variance_path(eps, 1.25e-8, 0.1, 0.0, 0.85, a)
        _fold_py.variance_path(eps, 1.25e-8, 0.1, 0.0, 0.85, b)
        assert np.array_equal(a, b)

    def test_garch_mean_matches_unconditional(self, rng):
        eps = rng.standard_normal(200_000)
        s2 = np.empty(eps.size)
        _fold.variance_path(eps, 1.25e-8, 0.1, 0.0, 0.85, s2)
        uncond = 1.25e-8 / (1 - 0.1 - 0.85)
        assert s2.mean() == pytest.approx(uncond, rel=0.05)
        assert (s2 > 0).all()

    def test_arch2_seeded_at_unconditional(self):
        s2 = np.empty(3)
        _fold_py.variance_path(np.zeros(3), 1.75e-7, 0.2, 0.1, 0.0, s2)
        uncond = 1.75e-7 / 0.7
        assert s2[0] == pytest.approx(uncond, rel=1e-12)
        # zero shocks pull the recursion toward omega + a2 * uncond history
        assert s2[1] == pytest.approx(1.75e-7 + 0.1 * uncond, rel=1e-12)


class TestSimulateObservedPrice:
    def test_no_staleness_observed_equals_rounded(self):
        config = simlab.SimModelConfig(n_half=2000, staleness="pr1", seed=3)
        path = simlab.simulate_observed_price(config)
        assert not path.stale.any()
        np.testing.assert_array_equal(
            path.observed, path.rounded_int.astype(float) * config.tick
        )

    def test_always_stale_price_constant(self):
        rounded = np.array([101, 102, 103], dtype=np.int64)
        held = simlab._hold_stale(rounded, np.array([True, True, True]), 100)
        assert held.tolist() == [100, 100, 100]

    def test_hold_resumes_on_fresh(self):
        rounded = np.array([101, 102, 103, 104], dtype=np.int64)
        stale = np.array([True, False, True, False])
        held = simlab._hold_stale(rounded, stale, 100)
        assert held.tolist() == [100, 102, 102, 104]

    def test_bit_reproducible(self):
        config = simlab.SimModelConfig(n_half=1500, volatility="sigma3",
                                       staleness="pr2", seed=11)
        a = simlab.simulate_observed_price(config)
        b = simlab.simulate_observed_price(config)
        assert np.array_equal(a.observed, b.observed)
        assert np.array_equal(a.sigma, b.sigma)

    def test_observed_prices_are_tick_multiples(self):
        config = simlab.SimModelConfig(n_half=1000, staleness="pr3", seed=5)
        path = simlab.simulate_observed_price(config)
        scaled = path.observed / config.tick
        np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-9)

    def test_zero_fraction_matches_rounding_probability(self):
        # Monte Carlo over 100 seeds: empirical rounding-zero fraction vs
        # the mean of the analytic per-step probabilities (true sigma)
        zero_fracs = []
        p_means = []
        for seed in range(100):
            config = simlab.SimModelConfig(n_half=1000, staleness="pr1", seed=seed)
            path = simlab.simulate_observed_price(config)
            zero_fracs.append(path.rounding_zero_mask().mean())
            prices = np.concatenate([[path.obs0], path.observed[:-1]])
            p = [rounding_zero_prob(prices[t], path.sigma[t], config.tick, 1.0)
                 for t in range(0, 2 * config.n_half, 50)]
            p_means.append(np.mean(p))
        diff = np.mean(zero_fracs) - np.mean(p_means)
        se = np.std(zero_fracs) / math.sqrt(len(zero_fracs))
        assert abs(diff) < 3 * se + 1e-3

    def test_pr4_drift_is_bounded_cycle(self):
        config = simlab.SimModelConfig(n_half=5000, staleness="pr4", seed=2)
        path = simlab.simulate_observed_price(config)
        assert path.pr.min() >= 0.0 and path.pr.max() <= 1.0
        assert path.pr.max() > 0.25  # the cosine drift lifts pr above its base

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError):
            simlab.SimModelConfig(volatility="sigma9")

    def test_no_staleness_flags_under_one_percent(self):
        # honest rounding probabilities: with pr = 0 the filter should
        # rarely set anything missing
        from entrometer.volstale import EwmaConfig, estimate_volatility

        config = simlab.SimModelConfig(n_half=5000, staleness="pr1", seed=21)
        path = simlab.simulate_observed_price(config)
        trace, _, _ = estimate_volatility(
            path.returns(), path.observed, EwmaConfig(alpha=0.05), config.tick
        )
        assert trace.missing_mask.mean() < 0.01


class TestMarkovFixture:
    def test_transition_rows_and_columns_stochastic(self):
        t = simlab.FIXTURE_TRANSITIONS
        np.testing.assert_allclose(t.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(t.sum(axis=0), 1.0, rtol=1e-12)

    def test_analytic_values_match_hand_derivation(self):
        h1, h2 = simlab.fixture_analytic_entropies()
        assert h1 == pytest.approx(H1_ANALYTIC, abs=1e-12)
        assert h2 == pytest.approx(H2_ANALYTIC, abs=1e-12)

    def test_sub_symbol_marginal_uniform(self):
        ret, _ = simlab.markov_fixture(300_000, seed=4)
        subs = ret[np.isin(ret, simlab.FIXTURE_SUB_RETURNS)]
        freqs = [np.mean(subs == v) for v in simlab.FIXTURE_SUB_RETURNS]
        assert freqs == pytest.approx([1 / 3] * 3, abs=0.01)

    def test_master_symbols_uniform(self):
        ret, _ = simlab.markov_fixture(300_000, seed=4)
        down = np.mean(ret == -0.4)
        up = np.mean(ret == 0.4)
        assert down == pytest.approx(1 / 3, abs=0.01)
        assert up == pytest.approx(1 / 3, abs=0.01)

    def test_reproducible(self):
        a, _ = simlab.markov_fixture(5000, seed=9)
        b, _ = simlab.markov_fixture(5000, seed=9)
        assert np.array_equal(a, b)


class TestBenchmark:
    def test_smoke_row_structure(self):
        configs = [simlab.SimModelConfig(n_half=1200, volatility="sigma1",
                                         staleness="pr2")]
        rows = simlab.benchmark_estimators(configs, replicates=3, master_seed=1)
        assert len(rows) == 1
        row = rows[0]
        assert row.n_effective == 3
        for key in ("mape_v1", "mape_v2", "mape_fixed_v1", "mape_nofilter_v1",
                    "alpha_v1", "er_n_v1", "frac_deleted_v1"):
            mean, lo, hi = row.stats[key]
            assert lo <= mean <= hi

    def test_scheduling_independent(self):
        configs = [simlab.SimModelConfig(n_half=1200, staleness="pr2")]
        serial = simlab.benchmark_estimators(configs, 2, master_seed=5, jobs=None)
        parallel = simlab.benchmark_estimators(configs, 2, master_seed=5, jobs=2)
        assert serial[0].stats == parallel[0].stats

    def test_tables_written(self, tmp_path):
        configs = [simlab.SimModelConfig(n_half=1200, staleness="pr2")]
        rows = simlab.benchmark_estimators(configs, 2, master_seed=5)
        vol = tmp_path / "table2.csv"
        stale = tmp_path / "table3.csv"
        simlab.write_volatility_table(rows, vol)
        simlab.write_staleness_table(rows, stale)
        header = vol.read_text().splitlines()[0]
        assert header.startswith("model,mape_v1,")
        assert len(vol.read_text().splitlines()) == 2
        assert stale.read_text().splitlines()[0].startswith("model,alpha_v1,")
