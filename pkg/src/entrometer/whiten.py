"""Intraday seasonality removal and ARMA microstructure whitening.

The volatility profile over the trading day is estimated by averaging
scaled absolute returns per intraday minute; microstructure serial
correlation is removed by taking one-step prediction errors of a
zero-mean ARMA model fitted by Gaussian maximum likelihood through the
Kalman filter, with the order chosen by BIC.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, FitFailureError, InsufficientDataError

MAX_ORDER_TOTAL = 6
SEED_ORDER_P, SEED_ORDER_Q = 0, 1
MIN_FIT_OBS = 200


@dataclass(frozen=True)
class ArmaOrder:
    p: int
    q: int

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("orders must be non-negative")
        if self.p + self.q >= MAX_ORDER_TOTAL:
            raise ValueError(f"p + q must be < {MAX_ORDER_TOTAL}")


#: Order applied to the first calendar year, before any selection exists.
SEED_ORDER = ArmaOrder(SEED_ORDER_P, SEED_ORDER_Q)


@dataclass
class SeasonalProfile:
    """Per-minute volatility shape xi and the per-day scales behind it.

    ``xi[j]`` corresponds to intraday slot label ``minutes[j]``; NaN where
    no day had an observation.
    """

    minutes: np.ndarray
    xi: np.ndarray
    n_days: int
    day_scales: np.ndarray = field(repr=False, default=None)

    def xi_for(self, minute_labels: np.ndarray) -> np.ndarray:
        """xi values looked up by intraday minute label (NaN if unknown)."""
        lookup = dict(zip(self.minutes.tolist(), self.xi.tolist()))
        return np.array([lookup.get(int(m), np.nan) for m in minute_labels])


@dataclass
class WhitenedSeries:
    """One-step-ahead prediction errors of the fitted zero-mean ARMA."""

    residuals: np.ndarray
    order: ArmaOrder
    loglik: float
    bic: float
    params: np.ndarray = None


def intraday_profile(returns: np.ndarray, minutes: np.ndarray | None = None,
                     mode: str = "std") -> SeasonalProfile:
    """Estimate the intraday volatility shape from a day-by-slot matrix.

    s_d is the standard deviation (population denominator) of the absolute
    returns of day d; xi_t averages |R_{d,t}| / s_d over the days where
    slot t is observed.  Days with no observations, or with a degenerate
    scale, are skipped.  ``mode="rms"`` uses the root mean square of
    absolute returns instead of their standard deviation.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 2:
        raise ValueError("expected a day-by-slot matrix")
    n_days, n_slots = r.shape
    if n_days < 2:
        raise InsufficientDataError("need at least 2 days")
    if minutes is None:
        minutes = np.arange(n_slots)

    abs_r = np.abs(r)
    used_rows = []
    scales = []
    for d in range(n_days):
        row = abs_r[d]
        obs = row[~np.isnan(row)]
        if obs.size < 2:
            continue
        if mode == "rms":
            s = math.sqrt(float(np.mean(obs**2)))
        else:
            s = float(np.std(obs))  # population denominator
        if s <= 0:
            continue
        used_rows.append(abs_r[d] / s)
        scales.append(s)
    if not used_rows:
        raise InsufficientDataError("no usable days for the intraday profile")

    stacked = np.vstack(used_rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        xi = np.nanmean(stacked, axis=0)
    return SeasonalProfile(
        minutes=np.asarray(minutes),
        xi=xi,
        n_days=len(used_rows),
        day_scales=np.array(scales),
    )


def deseasonalize(returns: np.ndarray, profile: SeasonalProfile) -> np.ndarray:
    """Divide each slot's return by the profile value of its slot.

    Accepts the same day-by-slot layout used to build the profile.
    Missing returns stay missing; slots with undefined xi become missing.
    """
    r = np.asarray(returns, dtype=float)
    xi = profile.xi
    if r.shape[-1] != xi.size:
        raise ValueError("profile built from a different slot layout")
    if np.any(xi[~np.isnan(xi)] == 0.0):
        raise DegenerateInputError("profile contains zero xi values")
    return r / xi


def _white_noise_loglik(y: np.ndarray) -> tuple[float, float]:
    obs = y[~np.isnan(y)]
    n = obs.size
    sigma2 = float(np.mean(obs**2))
    if sigma2 <= 0:
        raise FitFailureError("degenerate white-noise variance")
    llf = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)
    return llf, sigma2


def _fit_sarimax(y: np.ndarray, order: ArmaOrder, maxiter: int = 100):
    from statsmodels.tsa.statespace.sarimax import SARIMAX

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = SARIMAX(
            y,
            order=(order.p, 0, order.q),
            trend=None,
            concentrate_scale=True,
            enforce_stationarity=True,
            enforce_invertibility=True,
        )
        result = model.fit(disp=0, method="lbfgs", maxiter=maxiter)
    if not result.mle_retvals.get("converged", False):
        raise FitFailureError(f"ARMA({order.p},{order.q}) did not converge")
    if not np.all(np.isfinite(result.params)):
        raise FitFailureError(f"ARMA({order.p},{order.q}) produced non-finite parameters")
    return result


def select_arma_order(series: np.ndarray, max_total: int = MAX_ORDER_TOTAL) -> ArmaOrder:
    """BIC-minimizing zero-mean ARMA order with p + q < max_total.

    BIC = -2 loglik + (p+q) ln(n) with n the number of observed points.
    Orders whose fit fails or does not converge are excluded.
    """
    y = np.asarray(series, dtype=float)
    n_obs = int((~np.isnan(y)).sum())
    if n_obs < MIN_FIT_OBS:
        raise InsufficientDataError(f"need at least {MIN_FIT_OBS} observations")
    log_n = math.log(n_obs)

    best_order = None
    best_bic = math.inf
    for p in range(max_total):
        for q in range(max_total - p):
            try:
                if p == 0 and q == 0:
                    llf, _ = _white_noise_loglik(y)
                else:
                    llf = float(_fit_sarimax(y, ArmaOrder(p, q)).llf)
            except FitFailureError:
                continue
            bic = -2.0 * llf + (p + q) * log_n
            if bic < best_bic:
                best_bic = bic
                best_order = ArmaOrder(p, q)
    if best_order is None:
        raise FitFailureError("no candidate ARMA order converged")
    return best_order


def arma_whiten(series: np.ndarray, order: ArmaOrder) -> WhitenedSeries:
    """One-step-ahead prediction errors of the fitted zero-mean ARMA.

    Missing observations pass through the filter's prediction step only,
    and the residual at a missing slot is missing.  Order (0, 0) leaves
    the series unchanged.
    """
    y = np.asarray(series, dtype=float)
    n_obs = int((~np.isnan(y)).sum())
    if n_obs == 0:
        return WhitenedSeries(
            residuals=np.full(y.shape, np.nan), order=order,
            loglik=math.nan, bic=math.nan, params=np.array([]),
        )
    if order.p == 0 and order.q == 0:
        llf, sigma2 = _white_noise_loglik(y)
        return WhitenedSeries(
            residuals=y.copy(), order=order, loglik=llf,
            bic=-2.0 * llf, params=np.array([sigma2]),
        )
    result = _fit_sarimax(y, order)
    residuals = np.asarray(result.filter_results.forecasts_error[0], dtype=float).copy()
    residuals[np.isnan(y)] = np.nan
    llf = float(result.llf)
    bic = -2.0 * llf + (order.p + order.q) * math.log(n_obs)
    return WhitenedSeries(
        residuals=residuals, order=order, loglik=llf, bic=bic,
        params=np.asarray(result.params, dtype=float),
    )
