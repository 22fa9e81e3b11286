"""Symbolic discretization of return series and block-entropy estimation.

Returns are mapped to small alphabets (3 or 4 symbols) by empirical
quantiles, block frequencies are counted over windows that contain no
missing values, and Shannon block entropy is estimated with a
finite-sample bias correction based on the Grassberger G sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InsufficientDataError

EULER_GAMMA = 0.5772156649015328606

MISSING = -1

# Symbol labels for the 3-letter alphabet: low -> 1, middle -> 0, high -> 2.
# The 4-letter alphabet uses ascending labels 0..3.
_TERNARY_LABELS = np.array([1, 0, 2], dtype=np.int8)


@dataclass
class SymbolSequence:
    """Discretized return series over a finite alphabet.

    ``symbols`` holds values in ``0..alphabet-1`` with ``-1`` marking
    missing slots. ``thresholds`` are the nominal quantile cut values
    (order statistics) used for the binning.
    """

    symbols: np.ndarray
    alphabet: int
    thresholds: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int8)
        valid = self.symbols >= 0
        if valid.any() and int(self.symbols[valid].max()) >= self.alphabet:
            raise ValueError("symbol outside alphabet")

    @property
    def n_valid(self) -> int:
        return int((self.symbols >= 0).sum())


@dataclass
class BlockDistribution:
    """Counts of length-``k`` blocks (missing-free windows) of a sequence.

    Blocks are encoded as base-``alphabet`` integers; ``codes`` lists the
    observed blocks in increasing order with positive ``counts``.
    """

    alphabet: int
    k: int
    codes: np.ndarray
    counts: np.ndarray
    n_b: int

    def block_string(self, code: int) -> str:
        digits = []
        for _ in range(self.k):
            digits.append(str(code % self.alphabet))
            code //= self.alphabet
        return "".join(reversed(digits))

    def most_frequent_block(self) -> str:
        """Highest-count block; ties break to the lexicographically smallest."""
        top = int(self.counts.max())
        candidates = self.codes[self.counts == top]
        return self.block_string(int(candidates.min()))

    def to_rows(self):
        return [(self.block_string(int(c)), int(f)) for c, f in zip(self.codes, self.counts)]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("block,count\n")
            for block, count in self.to_rows():
                fh.write(f"{block},{count}\n")

    @classmethod
    def from_counts(cls, counts: dict[int, int], alphabet: int, k: int) -> "BlockDistribution":
        codes = np.array(sorted(counts), dtype=np.int64)
        cnt = np.array([counts[c] for c in codes], dtype=np.int64)
        return cls(alphabet, k, codes, cnt, int(cnt.sum()))


@dataclass
class EntropyEstimate:
    """Plug-in and bias-corrected block entropy, in base-``alphabet`` units."""

    plugin: float
    corrected: float
    rate: float
    k: int
    alphabet: int


def _midrank_bins(values: np.ndarray, alphabet: int) -> np.ndarray:
    """Quantile bin index per value, assigning tied values by mid-rank.

    A value whose tie group has L smaller elements and E equal elements
    goes above the j-th cut (at fraction j/alphabet) iff the group's
    mid-rank L + E/2 exceeds j*n/alphabet.  For all-distinct data this
    reduces to an equal-count split on ranks.
    """
    n = values.size
    sv = np.sort(values)
    lo = np.searchsorted(sv, values, side="left")
    hi = np.searchsorted(sv, values, side="right")
    two_mid = (lo + hi).astype(np.int64)  # 2L + E
    bins = (alphabet * two_mid - 1) // (2 * n)
    return np.clip(bins, 0, alphabet - 1)


def _rank_bins_rows(x: np.ndarray, alphabet: int) -> np.ndarray:
    """Row-wise quantile bins for a matrix of distinct (continuous) values."""
    n = x.shape[-1]
    order = np.argsort(x, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(n, dtype=order.dtype), axis=-1)
    two_mid = 2 * ranks.astype(np.int64) + 1
    bins = (alphabet * two_mid - 1) // (2 * n)
    return np.clip(bins, 0, alphabet - 1).astype(np.int8)


def _nominal_thresholds(values: np.ndarray, alphabet: int) -> tuple[float, ...]:
    n = values.size
    sv = np.sort(values)
    ranks = [math.ceil(j * n / alphabet) for j in range(1, alphabet)]
    return tuple(float(sv[r - 1]) for r in ranks)


def discretize_quantile(returns: np.ndarray, alphabet: int) -> SymbolSequence:
    """Discretize returns into ``alphabet`` (3 or 4) symbols by empirical quantiles.

    Missing (NaN) slots stay missing.  The 3-symbol labels follow the
    low/middle/high = 1/0/2 convention; 4-symbol labels are ascending.
    """
    if alphabet not in (3, 4):
        raise ValueError("alphabet must be 3 or 4")
    x = np.asarray(returns, dtype=float)
    valid = ~np.isnan(x)
    vals = x[valid]
    if vals.size < alphabet:
        raise InsufficientDataError(
            f"need at least {alphabet} non-missing returns, got {vals.size}"
        )
    if np.all(vals == vals[0]):
        raise DegenerateInputError("all returns identical; quantile bins undefined")
    bins = _midrank_bins(vals, alphabet).astype(np.int8)
    if alphabet == 3:
        bins = _TERNARY_LABELS[bins]
    symbols = np.full(x.shape, MISSING, dtype=np.int8)
    symbols[valid] = bins
    return SymbolSequence(symbols, alphabet, _nominal_thresholds(vals, alphabet))


def discretize_pair(returns_1: np.ndarray, returns_2: np.ndarray) -> SymbolSequence:
    """Joint 4-symbol discretization of two series relative to their medians.

    Only slots that are non-missing in both series are used; the symbol is
    0/1/2/3 for (below, below), (below, above), (above, below),
    (above, above) relative to the per-series medians of the common slots.
    """
    r1 = np.asarray(returns_1, dtype=float)
    r2 = np.asarray(returns_2, dtype=float)
    if r1.shape != r2.shape:
        raise ValueError("series must share the grid")
    common = ~np.isnan(r1) & ~np.isnan(r2)
    if int(common.sum()) < 2:
        raise InsufficientDataError("fewer than 2 common non-missing slots")
    a = r1[common]
    b = r2[common]
    bit1 = _midrank_bins(a, 2)
    bit2 = _midrank_bins(b, 2)
    symbols = np.full(r1.shape, MISSING, dtype=np.int8)
    symbols[common] = (2 * bit1 + bit2).astype(np.int8)
    m1 = _nominal_thresholds(a, 2)[0]
    m2 = _nominal_thresholds(b, 2)[0]
    return SymbolSequence(symbols, 4, (m1, m2))


def _run_lengths(symbols: np.ndarray) -> np.ndarray:
    """Lengths of maximal missing-free runs."""
    valid = symbols >= 0
    if not valid.any():
        return np.array([], dtype=np.int64)
    padded = np.concatenate([[False], valid, [False]])
    d = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return (ends - starts).astype(np.int64)


def count_blocks(symbols: np.ndarray, k: int) -> int:
    """Number of length-``k`` windows containing no missing symbol."""
    runs = _run_lengths(np.asarray(symbols))
    return int(np.maximum(runs - k + 1, 0).sum())


def select_block_length(sequence: SymbolSequence) -> int:
    """Largest K with K < floor(log_A n_b(K)); at least 1.

    n_b(K) counts the complete (missing-free) windows of length K.
    """
    symbols = sequence.symbols
    a = sequence.alphabet
    if count_blocks(symbols, 1) == 0:
        raise InsufficientDataError("no non-missing symbols")
    best = 1
    k = 2
    while True:
        n_b = count_blocks(symbols, k)
        if n_b == 0:
            break
        if k < math.floor(math.log(n_b) / math.log(a)):
            best = k
            k += 1
        else:
            break
    return best


def block_frequencies(sequence: SymbolSequence, k: int) -> BlockDistribution:
    """Count every slot-consecutive window of ``k`` present symbols.

    A missing slot invalidates all windows covering it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    symbols = np.asarray(sequence.symbols, dtype=np.int64)
    a = sequence.alphabet
    n = symbols.size
    if n < k:
        raise InsufficientDataError("sequence shorter than block length")
    valid = symbols >= 0
    window_ok = valid[: n - k + 1].copy()
    codes = np.where(valid, symbols, 0)[: n - k + 1].copy()
    for j in range(1, k):
        seg = slice(j, n - k + 1 + j)
        window_ok &= valid[seg]
        codes = codes * a + np.where(valid, symbols, 0)[seg]
    codes = codes[window_ok]
    if codes.size == 0:
        raise InsufficientDataError("no complete blocks")
    counts = np.bincount(codes, minlength=a**k)
    observed = np.flatnonzero(counts)
    return BlockDistribution(a, k, observed.astype(np.int64),
                             counts[observed].astype(np.int64), int(codes.size))


def grassberger_g(n_max: int) -> np.ndarray:
    """Table of G(0..n_max): G(1) = -gamma - ln 2, G(2) = 2 - gamma - ln 2,
    G(2n+1) = G(2n), G(2n+2) = G(2n) + 2/(2n+1).  G(0) is set to 0 so that
    f*G(f) vanishes at f = 0.
    """
    g = np.zeros(max(n_max, 1) + 1)
    g[1] = -EULER_GAMMA - math.log(2.0)
    if n_max >= 2:
        even = np.arange(2, n_max + 1, 2)
        increments = np.concatenate([[0.0], 2.0 / (even[1:] - 1.0)])
        g[even] = (2.0 - EULER_GAMMA - math.log(2.0)) + np.cumsum(increments)
        odd = np.arange(3, n_max + 1, 2)
        g[odd] = g[odd - 1]
    return g


def entropy_estimate(distribution: BlockDistribution) -> EntropyEstimate:
    """Plug-in and Grassberger-corrected k-block entropy in base-A units."""
    n_b = distribution.n_b
    if n_b < 1:
        raise InsufficientDataError("empty block distribution")
    f = distribution.counts.astype(np.float64)
    ln_a = math.log(distribution.alphabet)
    log_nb = math.log(n_b)
    plugin = (log_nb - float(np.sum(f * np.log(f))) / n_b) / ln_a
    g = grassberger_g(int(distribution.counts.max()))
    corrected = (log_nb - float(np.sum(f * g[distribution.counts])) / n_b) / ln_a
    return EntropyEstimate(
        plugin=plugin,
        corrected=corrected,
        rate=corrected / distribution.k,
        k=distribution.k,
        alphabet=distribution.alphabet,
    )


def corrected_entropy_rate(returns: np.ndarray, alphabet: int) -> EntropyEstimate:
    """Discretize, pick k, and estimate entropy in one step."""
    seq = discretize_quantile(returns, alphabet)
    k = select_block_length(seq)
    return entropy_estimate(block_frequencies(seq, k))
