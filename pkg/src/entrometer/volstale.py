"""Joint volatility and price-staleness estimation.

A modified exponentially weighted moving average walks the return series
once, freezing on missing slots, deciding per zero return whether it is a
rounding artifact (kept) or a stale quote (set missing), and scaling the
first return after a gap down to one-step size before it enters the
average.  The budget of zeros to keep is driven by the cumulative
rounding-zero probability of each observed return.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import _fold_py
from .errors import (
    EmptyInputError,
    InsufficientDataError,
    NumericalError,
    OptimizationError,
)

try:
    from . import _fold as _fold_fast
except ImportError:  # extension not built; the pure-Python twin is exact
    _fold_fast = _fold_py

MU1 = math.sqrt(2.0 / math.pi)

KEPT = _fold_py.KEPT
RETAINED_ZERO = _fold_py.RETAINED_ZERO
STALE_FLAGGED = _fold_py.STALE_FLAGGED
MISSING_SRC = _fold_py.MISSING_SRC
AGG_FLAGGED = _fold_py.AGG_FLAGGED
LEADING_STRIPPED = _fold_py.LEADING_STRIPPED

ALPHA_BOUNDS = (1e-4, 1.0 - 1e-4)


@dataclass(frozen=True)
class EwmaConfig:
    """Smoothing weight and averaging mode for the volatility recursion.

    mode "abs" updates sigma from |r|/mu1 (Sig_1); mode "squared" updates
    sigma^2 from r^2 (Sig_2).
    """

    alpha: float = 0.05
    mode: str = "abs"
    mu1: float = MU1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.mode not in ("abs", "squared"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class StalenessVolatilityTrace:
    """Per-slot state of the joint estimator.

    ``sigma[k]`` is the predictive volatility for the return at slot k,
    ``p[k]`` the rounding-zero probability of that return, ``z`` the
    running sum of p over observed returns, ``n_save`` the remaining
    zero-retention budget after slot k, and ``flags`` the per-slot
    disposition codes from ``_fold_py``.
    """

    sigma: np.ndarray
    p: np.ndarray
    z: np.ndarray
    n_save: np.ndarray
    flags: np.ndarray
    start: int
    alpha: float
    mode: str
    filter_zeros: bool

    @property
    def missing_mask(self) -> np.ndarray:
        return (self.flags == STALE_FLAGGED) | (self.flags == MISSING_SRC) | \
            (self.flags == AGG_FLAGGED) | (self.flags == LEADING_STRIPPED)

    @property
    def retained_zero_mask(self) -> np.ndarray:
        return self.flags == RETAINED_ZERO

    @property
    def accumulated_mask(self) -> np.ndarray:
        """Slots whose p entered z (kept one-step returns)."""
        return (self.flags == KEPT) | (self.flags == RETAINED_ZERO)

    @property
    def sum_p(self) -> float:
        return float(self.z[-1]) if self.z.size else 0.0


@dataclass
class FilteredReturns:
    """Return series after staleness filtering (NaN marks missing)."""

    values: np.ndarray
    retained_zero_mask: np.ndarray
    n_retained_zeros: int


def ewma_update(config: EwmaConfig, r_prev: float, sigma_prev: float) -> float:
    """One EWMA step: the new sigma from the previous return (or its proxy)."""
    if sigma_prev <= 0:
        raise ValueError("sigma_prev must be positive")
    a = config.alpha
    if config.mode == "squared":
        return math.sqrt(a * r_prev * r_prev + (1.0 - a) * sigma_prev * sigma_prev)
    return a * abs(r_prev) / config.mu1 + (1.0 - a) * sigma_prev


def rounding_zero_prob(price: float, sigma: float, tick: float, delta_t: float) -> float:
    """Probability that a zero return is produced by price rounding alone.

    p = erf(R) + (exp(-R^2) - 1) / (R sqrt(pi)) with
    R = tick / (price * sigma * sqrt(2 * delta_t)), clamped to [0, 1].
    """
    if min(price, sigma, tick, delta_t) <= 0:
        raise ValueError("price, sigma, tick and delta_t must all be positive")
    r = tick / (price * sigma * math.sqrt(2.0 * delta_t))
    if r == 0.0:
        return 0.0
    p = math.erf(r) + math.expm1(-r * r) / (r * math.sqrt(math.pi))
    if not math.isfinite(p):
        raise NumericalError(
            f"non-finite rounding probability (price={price}, sigma={sigma}, "
            f"tick={tick}, delta_t={delta_t})"
        )
    return min(max(p, 0.0), 1.0)


def _prepare_inputs(returns, end_prices):
    ret = np.ascontiguousarray(returns, dtype=np.float64)
    prices = np.ascontiguousarray(end_prices, dtype=np.float64)
    if ret.shape != prices.shape:
        raise ValueError("returns and end_prices must be aligned")
    miss = np.isnan(ret)
    observed_prices = prices[~miss]
    if np.isnan(observed_prices).any() or (observed_prices <= 0).any():
        raise ValueError("every observed return needs a positive end price")
    return ret, prices, miss


def _fold_buffers(n):
    return (
        np.full(n, np.nan),
        np.full(n, np.nan),
        np.zeros(n),
        np.zeros(n, dtype=np.int64),
        np.full(n, MISSING_SRC, dtype=np.int8),
    )


def _run_fold(ret, miss, prices, config, tick, delta, filter_zeros, buffers):
    n = ret.size
    nonzero = ~miss & (ret != 0.0)
    if not nonzero.any():
        raise EmptyInputError("no non-zero return to initialize the estimator")
    start = int(np.flatnonzero(nonzero)[0])

    sigma, p, z, n_save, flags = buffers
    sigma[:start] = np.nan
    p[:start] = np.nan
    z[:start] = 0.0
    n_save[:start] = 0
    flags[:start] = np.where(miss[:start], MISSING_SRC, LEADING_STRIPPED)

    price_ff = prices.copy()
    price_ff[miss] = np.nan
    bad = np.isnan(price_ff)
    idx = np.where(~bad, np.arange(n), 0)
    np.maximum.accumulate(idx, out=idx)
    price_ff = price_ff[idx]

    _fold_fast.staleness_fold(
        ret, miss.astype(np.uint8), price_ff,
        config.alpha, config.mu1, tick, math.sqrt(2.0 * delta),
        filter_zeros, config.mode == "squared", start,
        sigma, p, z, n_save, flags,
    )
    return start


def filter_and_estimate(
    returns,
    end_prices,
    config: EwmaConfig,
    tick: float,
    delta: float = 1.0,
    filter_zeros: bool = True,
) -> tuple[StalenessVolatilityTrace, FilteredReturns]:
    """Run the joint estimator over one return series.

    ``returns[k]`` is the log-return ending at slot k (NaN = missing) and
    ``end_prices[k]`` the rounded price observed at that slot.  Leading
    zeros are stripped before the recursion starts.  With
    ``filter_zeros=False`` zeros are ordinary observations and only the
    missing-gap handling remains active.
    """
    if tick <= 0 or delta <= 0:
        raise ValueError("tick and delta must be positive")
    ret, prices, miss = _prepare_inputs(returns, end_prices)
    buffers = _fold_buffers(ret.size)
    start = _run_fold(ret, miss, prices, config, tick, delta, filter_zeros, buffers)
    sigma, p, z, n_save, flags = buffers
    trace = StalenessVolatilityTrace(
        sigma=sigma, p=p, z=z, n_save=n_save, flags=flags, start=start,
        alpha=config.alpha, mode=config.mode, filter_zeros=filter_zeros,
    )
    values = ret.copy()
    values[trace.missing_mask] = np.nan
    retained = trace.retained_zero_mask
    filtered = FilteredReturns(values, retained, int(retained.sum()))
    return trace, filtered


def staleness_significance(trace: StalenessVolatilityTrace, n_real_zeros: int) -> bool:
    """True when the observed zero count exceeds the rounding-only bound.

    The expected zero count is the accumulated sum of rounding
    probabilities; the test allows 1.96 binomial standard deviations above
    it.  False means every zero is explainable by rounding and the caller
    should restore the flagged zeros.
    """
    n = int(trace.accumulated_mask.sum())
    if n == 0:
        raise InsufficientDataError("no observed returns in trace")
    sum_p = trace.sum_p
    p_hat = sum_p / n
    var = p_hat * (1.0 - p_hat) * n
    return n_real_zeros > sum_p + 1.96 * math.sqrt(var)


def estimate_volatility(
    returns,
    end_prices,
    config: EwmaConfig,
    tick: float,
    delta: float = 1.0,
    check_significance: bool = True,
) -> tuple[StalenessVolatilityTrace, FilteredReturns, bool]:
    """Staleness-filtered estimate, degrading to the plain EWMA when the
    zero count is statistically explainable by rounding alone.

    Returns (trace, filtered, staleness_present).
    """
    trace, filtered = filter_and_estimate(returns, end_prices, config, tick, delta)
    if not check_significance:
        return trace, filtered, True
    ret = np.asarray(returns, dtype=float)
    n_real = int(((ret == 0.0) & ~np.isnan(ret)).sum())
    present = staleness_significance(trace, n_real)
    if present:
        return trace, filtered, True
    trace, filtered = filter_and_estimate(
        returns, end_prices, config, tick, delta, filter_zeros=False
    )
    return trace, filtered, False


def optimize_alpha(
    returns,
    end_prices,
    mode: str,
    tick: float,
    delta: float = 1.0,
    filter_zeros: bool = True,
    check_significance: bool = True,
    bounds: tuple[float, float] = ALPHA_BOUNDS,
    xatol: float = 1e-6,
) -> float:
    """Smoothing weight minimizing Er = sum (sigma_k^2 - r_k^2)^2 over the
    returns retained by the estimator, searched by Brent's bounded method.
    """
    ret, prices, miss = _prepare_inputs(returns, end_prices)
    if int((~miss).sum()) < 100:
        raise InsufficientDataError("need at least 100 non-missing returns")
    n_real = int(((ret == 0.0) & ~miss).sum())
    buffers = _fold_buffers(ret.size)
    sigma, p, z, n_save, flags = buffers

    def objective(alpha: float) -> float:
        config = EwmaConfig(alpha=alpha, mode=mode)
        _run_fold(ret, miss, prices, config, tick, delta, filter_zeros, buffers)
        if filter_zeros and check_significance:
            acc = (flags == KEPT) | (flags == RETAINED_ZERO)
            n = int(acc.sum())
            sum_p = float(z[-1])
            p_hat = sum_p / n
            bound = sum_p + 1.96 * math.sqrt(p_hat * (1.0 - p_hat) * n)
            if not n_real > bound:
                _run_fold(ret, miss, prices, config, tick, delta, False, buffers)
        kept = (flags == KEPT) | (flags == RETAINED_ZERO)
        diff = sigma[kept] ** 2 - ret[kept] ** 2
        return float(np.sum(diff * diff))

    result = minimize_scalar(
        objective, bounds=bounds, method="bounded", options={"xatol": xatol}
    )
    if not np.isfinite(result.fun):
        raise OptimizationError("Er objective non-finite over the search interval")
    return float(result.x)


def trace_to_csv(trace: StalenessVolatilityTrace, slots, path, header: str = "") -> None:
    """Write the per-slot trace (the golden-file regression surface)."""
    missing = trace.missing_mask
    retained = trace.retained_zero_mask
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        writer = csv.writer(fh)
        writer.writerow(
            ["slot", "sigma", "p", "Z", "n_save", "missing_flag", "retained_zero_flag"]
        )
        for k, slot in enumerate(slots):
            sig = trace.sigma[k]
            pk = trace.p[k]
            writer.writerow([
                slot,
                "" if math.isnan(sig) else repr(float(sig)),
                "" if math.isnan(pk) else repr(float(pk)),
                repr(float(trace.z[k])),
                int(trace.n_save[k]),
                int(missing[k]),
                int(retained[k]),
            ])


def alpha_for_policy(policy: str, fixed_alpha: float, returns, end_prices,
                     mode: str, tick: float, delta: float = 1.0) -> float:
    """Resolve the alpha policy: 'fixed' returns fixed_alpha, 'optimized'
    fits alpha on the given series."""
    if policy == "fixed":
        return fixed_alpha
    if policy == "optimized":
        return optimize_alpha(returns, end_prices, mode, tick, delta)
    raise ValueError(f"unknown alpha policy {policy!r}")
