"""Acceptance suite: one test per numbered criterion, each at its stated
tolerance, printing a summary line on success (run with -s or -rP to see
them; the -v test names give the per-criterion pass/fail lines either way).
"""

import itertools
import json
import os
import time

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.stats import binom
from synthdata import write_panel

from entrometer import efficiency, entropy, simlab, volstale
from entrometer.cli import main as cli_main
from entrometer.cluster import DistanceMatrix, kl_distance, upgma
from entrometer.efficiency import BoundCache, mc_entropy_bound
from entrometer.entropy import BlockDistribution

MASTER_SEED = 20260808

H1_TARGET = 0.946
H2_TARGET = 0.944


def _report(name, detail):
    print(f"[PASS] {name}: {detail}")


def test_criterion_01_markov_fixture_analytics():
    t0 = time.time()
    h1, h2 = simlab.fixture_analytic_entropies()
    assert abs(h1 - H1_TARGET) <= 1e-3
    assert abs(h2 - H2_TARGET) <= 1e-3

    returns, _ = simlab.markov_fixture(1_000_000, seed=MASTER_SEED)
    seq4 = entropy.discretize_quantile(returns, 4)
    est1 = entropy.entropy_estimate(entropy.block_frequencies(seq4, 1))
    est2 = entropy.entropy_estimate(entropy.block_frequencies(seq4, 2))
    emp_h1 = est1.corrected
    emp_h2 = est2.corrected / 2.0
    assert abs(emp_h1 - h1) <= 0.005
    assert abs(emp_h2 - h2) <= 0.005

    seq3 = entropy.discretize_quantile(returns, 3)
    emp_h1_base3 = entropy.entropy_estimate(entropy.block_frequencies(seq3, 1)).corrected
    assert abs(emp_h1_base3 - 1.0) <= 0.002

    elapsed = time.time() - t0
    assert elapsed < 30.0
    _report("criterion 1",
            f"H1={h1:.4f} H2={h2:.4f} empirical=({emp_h1:.4f},{emp_h2:.4f}) "
            f"base3={emp_h1_base3:.4f} in {elapsed:.1f}s")


def test_criterion_02_false_positive_calibration():
    t0 = time.time()
    n_months = 300
    length = 7000
    flagged = {3: 0, 4: 0}
    bounds = {a: mc_entropy_bound(length, a, n_sim=10_000, seed=MASTER_SEED)
              for a in (3, 4)}
    for month in range(n_months):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=(MASTER_SEED, 555, month)))
        returns = rng.standard_normal(length)
        for a in (3, 4):
            est = entropy.corrected_entropy_rate(returns, a)
            if est.rate / bounds[a].bound < 1.0:
                flagged[a] += 1
    lo = int(binom.ppf(0.005, n_months, 0.01))
    hi = int(binom.ppf(0.995, n_months, 0.01))
    for a in (3, 4):
        assert lo <= flagged[a] <= hi, f"A={a}: {flagged[a]} outside [{lo},{hi}]"
    elapsed = time.time() - t0
    assert elapsed < 600.0
    _report("criterion 2",
            f"flags 3-sym={flagged[3]} 4-sym={flagged[4]} allowed [{lo},{hi}] "
            f"in {elapsed:.0f}s")


def test_criterion_03_markov_fixture_detection():
    length = 11_000
    cache = BoundCache(n_sim=10_000, seed=MASTER_SEED)
    hits = 0
    rates3, rates4 = [], []
    for seed in range(100):
        returns, _ = simlab.markov_fixture(length, seed=seed)
        est3 = entropy.corrected_entropy_rate(returns, 3)
        est4 = entropy.corrected_entropy_rate(returns, 4)
        n_b3 = length - est3.k + 1
        n_b4 = length - est4.k + 1
        rate3 = est3.rate / cache.get(n_b3 + est3.k - 1, 3).bound
        rate4 = est4.rate / cache.get(n_b4 + est4.k - 1, 4).bound
        rates3.append(rate3)
        rates4.append(rate4)
        if rate4 < 1.0 and rate3 >= 0.99:
            hits += 1
    assert hits >= 95
    _report("criterion 3",
            f"{hits}/100 runs (rate4 mean {np.mean(rates4):.3f}, "
            f"rate3 mean {np.mean(rates3):.3f})")


@pytest.fixture(scope="module")
def desk_benchmark():
    configs = [simlab.SimModelConfig(volatility=v, staleness=p)
               for v, p in simlab.MODEL_GRID]
    rows = simlab.benchmark_estimators(configs, replicates=100,
                                       master_seed=MASTER_SEED,
                                       variants=("optimized",), jobs=2)
    return {row.model: row for row in rows}


@pytest.fixture(scope="module")
def sigma1_filter_benchmark():
    configs = [simlab.SimModelConfig(volatility="sigma1", staleness=p)
               for p in ("pr2", "pr3", "pr4")]
    rows = simlab.benchmark_estimators(configs, replicates=100,
                                       master_seed=MASTER_SEED,
                                       variants=("optimized", "unfiltered"),
                                       jobs=2)
    return {row.model: row for row in rows}


def test_criterion_04_volatility_accuracy(desk_benchmark, sigma1_filter_benchmark):
    base = desk_benchmark["sigma1,pr1"]
    mape = base.stats["mape_v1"][0]
    assert 0.0007 < mape < 0.0507, f"sigma1,pr1 MAPE {mape} outside the band"

    gains = {}
    for pr in ("pr2", "pr3", "pr4"):
        row = sigma1_filter_benchmark[f"sigma1,{pr}"]
        filtered = row.stats["mape_v1"][0]
        unfiltered = row.stats["mape_nofilter_v1"][0]
        assert filtered < unfiltered, f"{pr}: {filtered} !< {unfiltered}"
        gains[pr] = (filtered, unfiltered)
    _report("criterion 4",
            f"sigma1,pr1 MAPE={mape:.4f}; filtered<unfiltered: " +
            " ".join(f"{k}:{a:.3f}<{b:.3f}" for k, (a, b) in gains.items()))


def test_criterion_05_staleness_accuracy(desk_benchmark):
    frac_pr3 = desk_benchmark["sigma1,pr3"].stats["frac_deleted_v1"][0]
    frac_pr2 = desk_benchmark["sigma1,pr2"].stats["frac_deleted_v1"][0]
    assert abs(frac_pr3 - 0.366) <= 0.03
    assert abs(frac_pr2 - 0.20) <= 0.03

    wins = 0
    for model, row in desk_benchmark.items():
        if row.stats["er_n_v1"][0] <= row.stats["er_n_v2"][0]:
            wins += 1
    assert wins >= 12, f"Er_N(Sig1) <= Er_N(Sig2) in only {wins}/16 rows"
    _report("criterion 5",
            f"deleted pr3={frac_pr3:.3f} pr2={frac_pr2:.3f}; "
            f"Er_N ordering holds in {wins}/16 rows")


def test_criterion_06_kl_metric_axioms():
    rng = np.random.default_rng(MASTER_SEED)
    n_cases = 10_000
    max_asym = 0.0
    for i in range(n_cases):
        n_blocks = int(rng.integers(2, 12))
        codes = rng.choice(16, size=n_blocks, replace=False)
        cp = {int(c): int(f) for c, f in zip(codes, rng.integers(1, 200, n_blocks))}
        codes_q = rng.choice(16, size=n_blocks, replace=False)
        cq = {int(c): int(f) for c, f in zip(codes_q, rng.integers(1, 200, n_blocks))}
        p = BlockDistribution.from_counts(cp, alphabet=4, k=2)
        q = BlockDistribution.from_counts(cq, alphabet=4, k=2)
        d_pq = kl_distance(p, q)
        assert d_pq >= 0.0
        asym = abs(d_pq - kl_distance(q, p))
        max_asym = max(max_asym, asym)
        assert asym < 1e-12
        if i % 10 == 0:
            assert kl_distance(p, p) == 0.0
    _report("criterion 6", f"{n_cases} random count maps, max asymmetry {max_asym:.2e}")


def test_criterion_07_upgma_against_oracle():
    from test_cluster import brute_force_upgma, random_distance_matrix

    d = np.array([[0.0, 1.0, 4.0], [1.0, 0.0, 4.0], [4.0, 4.0, 0.0]])
    tree = upgma(DistanceMatrix(["A", "B", "C"], d))
    assert tree.merges == [(0, 1, 1.0, 2), (2, 3, 4.0, 3)]

    rng = np.random.default_rng(MASTER_SEED + 7)
    for case in range(200):
        n = int(rng.integers(2, 13))
        matrix = random_distance_matrix(rng, n)
        tree = upgma(DistanceMatrix(list(range(n)), matrix))
        expected = brute_force_upgma(matrix)
        assert [m[:2] for m in tree.merges] == [m[:2] for m in expected]
        np.testing.assert_allclose([m[2] for m in tree.merges],
                                   [m[2] for m in expected], rtol=1e-9)
        heights = tree.heights()
        assert (np.diff(heights) >= -1e-12).all()
        coph = tree.cophenetic()
        for i, j, k in itertools.combinations(range(n), 3):
            trio = sorted([coph[i, j], coph[i, k], coph[j, k]])
            assert trio[2] <= trio[1] + 1e-12  # two largest equal: ultrametric
    _report("criterion 7", "3-leaf exact; 200 random matrices match the "
                           "brute-force oracle, monotone and ultrametric")


def test_criterion_08_bias_correction_helps():
    n, seeds = 5000, 200
    plug_err, corr_err = [], []
    for seed in range(seeds):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=(MASTER_SEED, 88, seed)))
        symbols = rng.integers(0, 4, size=n).astype(np.int8)
        seq = entropy.SymbolSequence(symbols, 4)
        k = entropy.select_block_length(seq)
        est = entropy.entropy_estimate(entropy.block_frequencies(seq, k))
        plug_err.append(abs(est.plugin / k - 1.0))
        corr_err.append(abs(est.rate - 1.0))
    assert np.mean(corr_err) < np.mean(plug_err)
    _report("criterion 8",
            f"mean |corrected-1|={np.mean(corr_err):.5f} < "
            f"mean |plugin-1|={np.mean(plug_err):.5f} over {seeds} seeds")


def test_criterion_09_optimizer_and_strategy():
    from scipy.optimize import minimize_scalar

    for target, objective in [(0.3, lambda a: (a - 0.3) ** 2),
                              (0.62, lambda a: (a - 0.62) ** 2 * (1.0 + a)),
                              (0.05, lambda a: abs(a - 0.05))]:
        result = minimize_scalar(objective, bounds=volstale.ALPHA_BOUNDS,
                                 method="bounded", options={"xatol": 1e-6})
        assert abs(result.x - target) <= 1e-6 * 1.5 + 1e-9

    rng = np.random.default_rng(MASTER_SEED + 9)
    symbols = rng.integers(0, 4, size=220_000).astype(np.int8)
    result = efficiency._strategy_counts(symbols, symbols.size // 2)
    assert result.trials >= 100_000
    assert abs(result.fraction - 0.5) <= 0.02
    _report("criterion 9",
            f"Brent exact; strategy fraction {result.fraction:.4f} over "
            f"{result.trials} trials")


def _tree_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for name in files:
            path = os.path.join(base, name)
            rel = os.path.relpath(path, root)
            with open(path, "rb") as fh:
                out[rel] = fh.read()
    return out


def test_criterion_10_end_to_end_determinism(tmp_path):
    bars = write_panel(tmp_path / "bars.csv", ["AAA", "BBB"], n_days=6)
    out_dir = tmp_path / "out"
    config = {"n_sim": 300, "seed": MASTER_SEED, "out": str(out_dir),
              "input": bars, "jobs": 1}
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))

    runner = CliRunner()

    def run_all():
        for args in (["analyze"], ["cluster"],
                     ["simulate", "--replicates", "2", "--n-half", "1200",
                      "--models", "sigma1,pr2", "--variants", "optimized"]):
            result = runner.invoke(cli_main, ["--config", str(config_path)] + args)
            assert result.exit_code == 0, result.output

    run_all()
    first = _tree_bytes(out_dir)
    run_all()
    second = _tree_bytes(out_dir)
    assert first.keys() == second.keys()
    diffs = [k for k in first if first[k] != second[k]]
    assert not diffs, f"outputs changed between runs: {diffs}"
    _report("criterion 10", f"{len(first)} output files byte-identical across runs")
