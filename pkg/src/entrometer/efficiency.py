"""Monte Carlo efficiency bounds, interval verdicts and the D/I strategy.

An interval is tested by comparing its corrected entropy rate against the
first percentile of the rates obtained from discretized Gaussian
sequences of matching effective length; a rate below the bound under
either discretization flags the interval as inefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import _rank_bins_rows, grassberger_g
from .errors import InsufficientDataError

N_SIM_DEFAULT = 10_000
_CHUNK = 500

DOWN_SYMBOLS = (0, 1)
UP_SYMBOLS = (2, 3)
PREFIX_LEN = 3
BLOCK_LEN = 4


@dataclass(frozen=True)
class EfficiencyBound:
    """First-percentile entropy rate of discretized Gaussian sequences."""

    l: int
    alphabet: int
    n_sim: int
    bound: float
    k: int
    seed: int
    percentile: int = 1


@dataclass
class IntervalVerdict:
    entropy_3: float
    bound_3: float
    rate_3: float
    entropy_4: float
    bound_4: float
    rate_4: float

    @property
    def inefficient(self) -> bool:
        return min(self.rate_3, self.rate_4) < 1.0


@dataclass
class StrategyResult:
    successes: int
    trials: int
    group_d: set = field(default_factory=set)
    group_i: set = field(default_factory=set)

    @property
    def fraction(self) -> float | None:
        if self.trials == 0:
            return None
        return self.successes / self.trials


def complete_block_length(l: int, alphabet: int) -> int:
    """Block length selected for a gap-free sequence of length l
    (n_b(K) = l - K + 1)."""
    if l < 1:
        raise InsufficientDataError("empty sequence")
    best = 1
    k = 2
    while l - k + 1 >= 1:
        n_b = l - k + 1
        if k < math.floor(math.log(n_b) / math.log(alphabet)):
            best = k
            k += 1
        else:
            break
    return best


def _replicate_entropies(l: int, alphabet: int, n_sim: int, seed: int) -> np.ndarray:
    """Corrected entropy rate per simulated Gaussian-increment sequence.

    Each replicate draws from its own stream derived from (seed, alphabet,
    replicate index), so results do not depend on chunking.
    """
    k = complete_block_length(l, alphabet)
    n_b = l - k + 1
    n_codes = alphabet**k
    g = grassberger_g(n_b)
    ln_a = math.log(alphabet)
    log_nb = math.log(n_b)
    rates = np.empty(n_sim)
    for lo in range(0, n_sim, _CHUNK):
        hi = min(lo + _CHUNK, n_sim)
        block = np.empty((hi - lo, l))
        for i, rep in enumerate(range(lo, hi)):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, alphabet, rep)))
            block[i] = rng.standard_normal(l)
        symbols = _rank_bins_rows(block, alphabet).astype(np.int64)
        codes = symbols[:, : n_b].copy()
        for j in range(1, k):
            codes *= alphabet
            codes += symbols[:, j: n_b + j]
        offsets = (np.arange(hi - lo, dtype=np.int64) * n_codes)[:, None]
        counts = np.bincount(
            (codes + offsets).ravel(), minlength=(hi - lo) * n_codes
        ).reshape(hi - lo, n_codes)
        fg = counts * g[counts]
        rates[lo:hi] = (log_nb - fg.sum(axis=1) / n_b) / (ln_a * k)
    return rates


def mc_entropy_bound(
    l: int, alphabet: int, n_sim: int = N_SIM_DEFAULT, seed: int = 0
) -> EfficiencyBound:
    """First percentile (rank ceil(0.01 n_sim)) of simulated entropy rates."""
    rates = _replicate_entropies(l, alphabet, n_sim, seed)
    rank = math.ceil(0.01 * n_sim)
    bound = float(np.partition(rates, rank - 1)[rank - 1])
    return EfficiencyBound(
        l=l, alphabet=alphabet, n_sim=n_sim, bound=bound,
        k=complete_block_length(l, alphabet), seed=seed,
    )


@dataclass
class BoundCache:
    """Bound store keyed by (l, alphabet); optional nearest-length reuse.

    ``l_tolerance`` = 0 demands exact lengths; a positive value allows
    reusing a cached bound whose length is within that relative distance.
    """

    n_sim: int = N_SIM_DEFAULT
    seed: int = 0
    l_tolerance: float = 0.0
    _store: dict = field(default_factory=dict)

    def get(self, l: int, alphabet: int) -> EfficiencyBound:
        key = (l, alphabet)
        if key in self._store:
            return self._store[key]
        if self.l_tolerance > 0:
            for (l0, a0), bound in self._store.items():
                if a0 == alphabet and abs(l0 - l) / l <= self.l_tolerance:
                    return bound
        bound = mc_entropy_bound(l, alphabet, self.n_sim, self.seed)
        self._store[key] = bound
        return bound


def classify_interval(
    entropy_3: float, bound_3: float, entropy_4: float, bound_4: float
) -> IntervalVerdict:
    """Efficiency rates per discretization; inefficient when any is < 1."""
    if min(entropy_3, bound_3, entropy_4, bound_4) <= 0:
        raise ValueError("entropies and bounds must be positive")
    return IntervalVerdict(
        entropy_3=entropy_3, bound_3=bound_3, rate_3=entropy_3 / bound_3,
        entropy_4=entropy_4, bound_4=bound_4, rate_4=entropy_4 / bound_4,
    )


def degree_of_inefficiency(verdicts: list) -> float:
    """Fraction of intervals flagged inefficient."""
    if not verdicts:
        raise InsufficientDataError("no verdicts")
    return sum(1 for v in verdicts if v.inefficient) / len(verdicts)


def _bins_against_sample(values: np.ndarray, sample: np.ndarray, alphabet: int) -> np.ndarray:
    """Quantile bins of ``values`` relative to the empirical distribution
    of ``sample`` (mid-rank tie rule, as in discretize_quantile)."""
    n = sample.size
    sv = np.sort(sample)
    lo = np.searchsorted(sv, values, side="left")
    hi = np.searchsorted(sv, values, side="right")
    two_mid = (lo + hi).astype(np.int64)
    bins = (alphabet * two_mid - 1) // (2 * n)
    return np.clip(bins, 0, alphabet - 1)


def _complete_windows(symbols: np.ndarray, start: int, stop: int, width: int) -> np.ndarray:
    """Windows of ``width`` consecutive present symbols starting in
    [start, stop - width]; returns an (n, width) array."""
    seg = symbols[start:stop]
    if seg.size < width:
        return np.empty((0, width), dtype=symbols.dtype)
    windows = np.lib.stride_tricks.sliding_window_view(seg, width)
    ok = (windows >= 0).all(axis=1)
    return windows[ok]


def _strategy_counts(symbols: np.ndarray, split: int) -> StrategyResult:
    """Group 3-symbol prefixes from the first segment, score the second.

    A prefix joins D (respectively I) when its successor lands in {0,1}
    (respectively {2,3}) more than half the time; ties join neither.
    """
    first = _complete_windows(symbols, 0, split, BLOCK_LEN)
    second = _complete_windows(symbols, split, symbols.size, BLOCK_LEN)

    def prefix_codes(blocks: np.ndarray) -> np.ndarray:
        codes = blocks[:, 0].astype(np.int64)
        for j in range(1, PREFIX_LEN):
            codes = codes * 4 + blocks[:, j]
        return codes

    n_prefix = 4**PREFIX_LEN
    down = np.zeros(n_prefix, dtype=np.int64)
    up = np.zeros(n_prefix, dtype=np.int64)
    if first.shape[0]:
        pc = prefix_codes(first)
        succ_down = np.isin(first[:, PREFIX_LEN], DOWN_SYMBOLS)
        np.add.at(down, pc[succ_down], 1)
        np.add.at(up, pc[~succ_down], 1)
    group_d = set(np.flatnonzero(down > up).tolist())
    group_i = set(np.flatnonzero(up > down).tolist())

    successes = trials = 0
    if second.shape[0]:
        pc = prefix_codes(second)
        succ_down = np.isin(second[:, PREFIX_LEN], DOWN_SYMBOLS)
        in_d = np.isin(pc, list(group_d)) if group_d else np.zeros(pc.size, bool)
        in_i = np.isin(pc, list(group_i)) if group_i else np.zeros(pc.size, bool)
        trials = int(in_d.sum() + in_i.sum())
        successes = int((in_d & succ_down).sum() + (in_i & ~succ_down).sum())

    def decode(code: int) -> str:
        digits = []
        for _ in range(PREFIX_LEN):
            digits.append(str(code % 4))
            code //= 4
        return "".join(reversed(digits))

    return StrategyResult(
        successes=successes, trials=trials,
        group_d={decode(c) for c in group_d},
        group_i={decode(c) for c in group_i},
    )


def evaluate_simple_strategy(returns: np.ndarray) -> StrategyResult:
    """Directional 4-symbol strategy for one interval.

    The interval splits in half; quartile thresholds come from the first
    half only, 4-blocks in the first half define the decreasing (D) and
    increasing (I) prefix groups, and second-half blocks with a grouped
    prefix score a success when the fourth symbol moves with the group.
    Blocks containing missing values are skipped.
    """
    r = np.asarray(returns, dtype=float)
    split = r.size // 2
    first_vals = r[:split]
    sample = first_vals[~np.isnan(first_vals)]
    if sample.size < 4:
        raise InsufficientDataError("first half has fewer than 4 observations")
    valid = ~np.isnan(r)
    symbols = np.full(r.shape, -1, dtype=np.int8)
    symbols[valid] = _bins_against_sample(r[valid], sample, 4).astype(np.int8)
    return _strategy_counts(symbols, split)
