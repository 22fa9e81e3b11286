"""Synthetic price lab: observed-price models, estimator benchmarks and
the adversarial Markov fixture.

The observed price is a rounded geometric diffusion whose updates stall
with a (possibly wandering) staleness probability.  The benchmark
replays the volatility/staleness estimator over many replicates and
reports accuracy metrics with replicate-quantile confidence bands.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _fold_py
from .errors import EntrometerError
from .volstale import (
    EwmaConfig,
    estimate_volatility,
    filter_and_estimate,
    optimize_alpha,
)

try:
    from . import _fold as _fold_fast
except ImportError:
    _fold_fast = _fold_py

logger = logging.getLogger(__name__)

#: Conditional-variance models: kind, then (omega, a1, a2, b) where used.
VOL_MODELS = {
    "sigma1": ("constant", 5e-4),
    "sigma2": ("arch", 1.75e-7, 0.2, 0.1),
    "sigma3": ("garch", 1.25e-8, 0.1, 0.85),
    "sigma4": ("garch", 1.25e-8, 0.15, 0.8),
}

STALENESS_MODELS = ("pr1", "pr2", "pr3", "pr4")

MODEL_GRID = [(v, p) for v in sorted(VOL_MODELS) for p in STALENESS_MODELS]

FIXTURE_TRANSITIONS = np.array([
    [1 / 6, 1 / 3, 1 / 2],
    [1 / 2, 1 / 6, 1 / 3],
    [1 / 3, 1 / 2, 1 / 6],
])
FIXTURE_SUB_RETURNS = (-0.3, 0.1, 0.2)
FIXTURE_JUMP_RETURNS = (-0.4, 0.4)


@dataclass(frozen=True)
class SimModelConfig:
    """One synthetic market: 2 * n_half steps of observed prices."""

    n_half: int = 100_000
    p0: float = 100.0
    nu: float = 1e-4
    tick: float = 0.01
    volatility: str = "sigma1"
    staleness: str = "pr1"
    seed: object = 0

    def __post_init__(self):
        if self.volatility not in VOL_MODELS:
            raise ValueError(f"unknown volatility model {self.volatility!r}")
        if self.staleness not in STALENESS_MODELS:
            raise ValueError(f"unknown staleness model {self.staleness!r}")

    @property
    def label(self) -> str:
        return f"{self.volatility},{self.staleness}"


@dataclass
class SimPath:
    """Simulated efficient and observed prices (arrays over t = 1..2N)."""

    config: SimModelConfig
    efficient: np.ndarray
    observed: np.ndarray
    sigma: np.ndarray
    stale: np.ndarray
    rounded_int: np.ndarray
    pr: np.ndarray
    obs0: float
    rounded_int0: int

    def returns(self) -> np.ndarray:
        prev = np.concatenate([[self.obs0], self.observed[:-1]])
        return np.log(self.observed / prev)

    def rounding_zero_mask(self) -> np.ndarray:
        """Zero-return slots of the rounded path before staleness."""
        prev = np.concatenate([[self.rounded_int0], self.rounded_int[:-1]])
        return self.rounded_int == prev

    @property
    def n_rounding_zeros(self) -> int:
        return int(self.rounding_zero_mask().sum())


@dataclass
class BenchmarkRow:
    """Aggregate metrics for one model: metric -> (mean, lo 2.5%, hi 97.5%)."""

    model: str
    stats: dict
    n_effective: int


def _sigma_path(config: SimModelConfig, eps: np.ndarray) -> np.ndarray:
    spec = VOL_MODELS[config.volatility]
    n = eps.size
    if spec[0] == "constant":
        return np.full(n, spec[1])
    if spec[0] == "arch":
        omega, a1, a2 = spec[1:]
        b = 0.0
    else:
        omega, a1, b = spec[1:]
        a2 = 0.0
    sigma2 = np.empty(n)
    _fold_fast.variance_path(np.ascontiguousarray(eps), omega, a1, a2, b, sigma2)
    return np.sqrt(sigma2)


def _pr_path(config: SimModelConfig, w2: np.ndarray) -> np.ndarray:
    n = w2.size
    model = config.staleness
    if model == "pr1":
        return np.zeros(n)
    noise = config.nu * np.cumsum(w2)
    if model == "pr2":
        pr = 0.1 + noise
    elif model == "pr3":
        pr = 0.2 + noise
    else:
        t = np.arange(1, n + 1, dtype=float)
        drift = np.cumsum(0.8 * math.pi / config.n_half
                          * np.cos(8.0 * t * math.pi / config.n_half))
        pr = 0.2 + drift + noise
    if (pr < 0).any() or (pr > 1).any():
        logger.warning("staleness probability clamped to [0, 1] for %s", config.label)
        pr = np.clip(pr, 0.0, 1.0)
    return pr


def _hold_stale(rounded_int: np.ndarray, stale: np.ndarray, base_int: int) -> np.ndarray:
    """Carry the previous observed value over every stale step."""
    n = rounded_int.size
    idx = np.where(~stale, np.arange(1, n + 1), 0)
    np.maximum.accumulate(idx, out=idx)
    with_base = np.concatenate([[base_int], rounded_int])
    return with_base[idx]


def simulate_observed_price(config: SimModelConfig) -> SimPath:
    """Euler simulation of the rounded, staleness-afflicted price path."""
    n = 2 * config.n_half
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed))
    eps = rng.standard_normal(n)
    w2 = rng.standard_normal(n)
    u = rng.random(n)

    sigma = _sigma_path(config, eps)
    efficient = config.p0 * np.cumprod(1.0 + sigma * eps)
    rounded_int = np.round(efficient / config.tick).astype(np.int64)
    rounded_int0 = int(round(config.p0 / config.tick))

    pr = _pr_path(config, w2)
    stale = u < pr
    held = _hold_stale(rounded_int, stale, rounded_int0)

    return SimPath(
        config=config,
        efficient=efficient,
        observed=held.astype(float) * config.tick,
        sigma=sigma,
        stale=stale,
        rounded_int=rounded_int,
        pr=pr,
        obs0=rounded_int0 * config.tick,
        rounded_int0=rounded_int0,
    )


FIXED_ALPHA = 0.05

VARIANTS_ALL = ("optimized", "fixed", "unfiltered")


def _replicate_metrics(config: SimModelConfig, variants=VARIANTS_ALL) -> dict:
    """All benchmark metrics for one simulated path."""
    path = simulate_observed_price(config)
    n = config.n_half
    ret = path.returns()
    prices = path.observed
    test = slice(n, 2 * n)
    sigma_true = path.sigma[test]
    n_round = int(path.rounding_zero_mask()[test].sum())

    out = {}
    for label, mode in (("v1", "abs"), ("v2", "squared")):
        alpha = None
        if "optimized" in variants or "unfiltered" in variants:
            alpha = optimize_alpha(ret[:n], prices[:n], mode, config.tick)
        if "optimized" in variants:
            out[f"alpha_{label}"] = alpha
            trace, filtered, _ = estimate_volatility(
                ret, prices, EwmaConfig(alpha=alpha, mode=mode), config.tick
            )
            est = trace.sigma[test]
            out[f"mape_{label}"] = float(np.mean(np.abs(est / sigma_true - 1.0)))
            kept = ~trace.missing_mask[test]
            n_a = int(kept.sum())
            zeros_kept = int(((ret[test] == 0.0) & kept).sum())
            out[f"frac_deleted_{label}"] = 1.0 - n_a / n
            if zeros_kept > 0:
                out[f"er_n_{label}"] = abs(n_round * n_a / (zeros_kept * n) - 1.0)
            else:
                out[f"er_n_{label}"] = math.nan
        if "fixed" in variants:
            trace, _, _ = estimate_volatility(
                ret, prices, EwmaConfig(alpha=FIXED_ALPHA, mode=mode), config.tick
            )
            est = trace.sigma[test]
            out[f"mape_fixed_{label}"] = float(np.mean(np.abs(est / sigma_true - 1.0)))
        if "unfiltered" in variants:
            # The plain-EWMA comparison runs at the alpha selected by the
            # staleness-aware method, isolating the effect of 0-filtering.
            trace, _ = filter_and_estimate(
                ret, prices, EwmaConfig(alpha=alpha, mode=mode),
                config.tick, filter_zeros=False,
            )
            est = trace.sigma[test]
            out[f"mape_nofilter_{label}"] = float(np.mean(np.abs(est / sigma_true - 1.0)))
    return out


def _benchmark_task(args):
    config, variants = args
    try:
        return config.label, _replicate_metrics(config, variants)
    except EntrometerError as exc:
        logger.warning("replicate dropped for %s: %s", config.label, exc)
        return config.label, None


def benchmark_estimators(
    configs: list[SimModelConfig],
    replicates: int,
    master_seed: int = 0,
    variants=VARIANTS_ALL,
    jobs: int | None = None,
) -> list[BenchmarkRow]:
    """Replicated benchmark over the given model configs.

    Replicate r of model m uses a stream derived from (master_seed, m, r),
    so results are independent of scheduling.  Per model and metric the
    row carries the replicate mean and the 2.5%/97.5% quantiles.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    tasks = []
    for m, config in enumerate(configs):
        for r in range(replicates):
            tasks.append((replace(config, seed=(master_seed, m, r)), variants))

    results: dict[str, list[dict]] = {c.label: [] for c in configs}
    if jobs is not None and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for label, metrics in pool.map(_benchmark_task, tasks, chunksize=4):
                if metrics is not None:
                    results[label].append(metrics)
    else:
        for task in tasks:
            label, metrics = _benchmark_task(task)
            if metrics is not None:
                results[label].append(metrics)

    rows = []
    for config in configs:
        samples = results[config.label]
        stats = {}
        if samples:
            for key in samples[0]:
                values = np.array([s[key] for s in samples])
                stats[key] = (
                    float(np.nanmean(values)),
                    float(np.nanquantile(values, 0.025)),
                    float(np.nanquantile(values, 0.975)),
                )
        rows.append(BenchmarkRow(model=config.label, stats=stats, n_effective=len(samples)))
    return rows


def _stat_cell(stats: dict, key: str):
    mean, lo, hi = stats[key]
    return [repr(mean), repr(lo), repr(hi)]


def write_volatility_table(rows: list[BenchmarkRow], path) -> None:
    """Six MAPE columns (optimized/fixed/unfiltered for both modes)."""
    keys = ["mape_v1", "mape_v2", "mape_fixed_v1", "mape_fixed_v2",
            "mape_nofilter_v1", "mape_nofilter_v2"]
    with open(path, "w") as fh:
        header = ["model"]
        for key in keys:
            header += [key, f"{key}_lo", f"{key}_hi"]
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [row.model]
            for key in keys:
                cells += _stat_cell(row.stats, key) if key in row.stats else ["", "", ""]
            fh.write(",".join(cells) + "\n")


def write_staleness_table(rows: list[BenchmarkRow], path) -> None:
    """Optimal alpha, zero-count error and deleted fraction per mode."""
    keys = ["alpha_v1", "alpha_v2", "er_n_v1", "er_n_v2",
            "frac_deleted_v1", "frac_deleted_v2"]
    with open(path, "w") as fh:
        header = ["model"]
        for key in keys:
            header += [key, f"{key}_lo", f"{key}_hi"]
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [row.model]
            for key in keys:
                cells += _stat_cell(row.stats, key) if key in row.stats else ["", "", ""]
            fh.write(",".join(cells) + "\n")


def _stationary(transitions: np.ndarray) -> np.ndarray:
    n = transitions.shape[0]
    a = np.vstack([transitions.T - np.eye(n), np.ones(n)])
    b = np.concatenate([np.zeros(n), [1.0]])
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi


def _fixture_distribution():
    """Atoms (value, mass) of the fixture return distribution."""
    pi = _stationary(FIXTURE_TRANSITIONS)
    atoms = [(FIXTURE_JUMP_RETURNS[0], 1.0 / 3.0)]
    atoms += [(v, pi[i] / 3.0) for i, v in enumerate(FIXTURE_SUB_RETURNS)]
    atoms.append((FIXTURE_JUMP_RETURNS[1], 1.0 / 3.0))
    atoms.sort()
    return atoms, pi


def _fixture_partition(alphabet: int = 4):
    """Symbol per atom under the mid-rank quantile rule."""
    atoms, _ = _fixture_distribution()
    bins = {}
    cdf_below = 0.0
    for value, mass in atoms:
        mid = cdf_below + mass / 2.0
        bins[value] = sum(1 for j in range(1, alphabet) if mid > j / alphabet)
        cdf_below += mass
    return bins


def fixture_analytic_entropies() -> tuple[float, float]:
    """Per-symbol block entropies H1 and H2 (base 4) of the fixture chain,
    derived from the transition probabilities."""
    atoms, pi = _fixture_distribution()
    bins = _fixture_partition(4)
    sub_bin = {i: bins[v] for i, v in enumerate(FIXTURE_SUB_RETURNS)}
    jump_bin = {1: bins[FIXTURE_JUMP_RETURNS[0]], 2: bins[FIXTURE_JUMP_RETURNS[1]]}

    third = 1.0 / 3.0
    ns_mass = np.zeros(4)
    for master, b in jump_bin.items():
        ns_mass[b] += third
    sub_mass = np.zeros(4)
    for s, b in sub_bin.items():
        sub_mass[b] += third * pi[s]
    marg = ns_mass + sub_mass

    h1 = -sum(m * math.log(m) for m in marg if m > 0) / math.log(4)

    members = {b: [s for s, bb in sub_bin.items() if bb == b] for b in range(4)}
    h2 = 0.0
    for x in range(4):
        for y in range(4):
            p = ns_mass[x] * marg[y] + sub_mass[x] * ns_mass[y]
            p += sum(
                pi[s] * FIXTURE_TRANSITIONS[s, sp]
                for s in members[x] for sp in members[y]
            ) / 9.0
            if p > 0:
                h2 -= p * math.log(p)
    h2 = h2 / math.log(4) / 2.0
    return h1, h2


def markov_fixture(length: int, seed: int = 0) -> tuple[np.ndarray, tuple[float, float]]:
    """Predictable return chain whose 3-symbol view is maximally random.

    Three regimes occur uniformly at random; one of them expands into
    three sub-returns following the fixture transition law conditioned on
    the previous sub-return.  Returns the series and the analytic
    per-symbol (H1, H2) in base 4.
    """
    if length < 2:
        raise ValueError("length must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 97)))
    master = rng.integers(0, 3, size=length)
    ret = np.where(master == 1, FIXTURE_JUMP_RETURNS[0], FIXTURE_JUMP_RETURNS[1]).astype(float)
    sub_slots = np.flatnonzero(master == 0)
    n_sub = sub_slots.size
    if n_sub:
        u = rng.random(n_sub)
        cum = np.cumsum(FIXTURE_TRANSITIONS, axis=1)
        subs = np.empty(n_sub, dtype=np.int64)
        state = int(u[0] * 3)  # first sub-symbol from the uniform marginal
        subs[0] = state
        for i in range(1, n_sub):
            row = cum[state]
            ui = u[i]
            state = 0 if ui < row[0] else (1 if ui < row[1] else 2)
            subs[i] = state
        ret[sub_slots] = np.asarray(FIXTURE_SUB_RETURNS)[subs]
    return ret, fixture_analytic_entropies()
