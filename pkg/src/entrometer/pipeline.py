"""End-to-end orchestration: cleaning, whitening, verdicts and reports.

Stages run per instrument and per calendar month in a fixed order:
cleaning -> intraday deseasonalization -> staleness-aware volatility
standardization -> ARMA residuals (order per calendar year, applied to
the following year) -> discretization -> entropy -> Monte Carlo verdict
-> trading strategy.  Every stage output can be persisted for audit, and
all randomness derives from one master seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import time

import numpy as np

from . import cluster as cluster_mod
from . import entropy as entropy_mod
from . import ingest, volstale, whiten
from .efficiency import (
    BoundCache,
    classify_interval,
    degree_of_inefficiency,
    evaluate_simple_strategy,
)
from .errors import EntrometerError

logger = logging.getLogger(__name__)


def _parse_time(value: str) -> time:
    hh, mm = value.split(":")
    return time(int(hh), int(mm))


@dataclass
class PipelineConfig:
    session_start: str = "10:00"
    session_end: str = "18:40"
    gap_threshold_minutes: int = 120
    outlier_k: int = 20
    outlier_delta: float = 5.0
    outlier_c: float = 5.0
    outlier_gamma: float = 0.05
    alpha_policy: str = "fixed"
    alpha: float = 0.05
    ewma_mode: str = "abs"
    deseason_mode: str = "std"
    causal_seasonality: bool = False
    check_significance: bool = True
    alphabets: tuple = (3, 4)
    n_sim: int = 10_000
    bound_l_tolerance: float = 0.0
    seed: int = 0
    jobs: int = 1
    input: str = ""
    out: str = "out"
    columns: dict = field(default_factory=dict)

    @property
    def session(self) -> tuple[time, time]:
        return (_parse_time(self.session_start), _parse_time(self.session_end))

    @classmethod
    def from_json(cls, path, **overrides) -> "PipelineConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        if cfg.alpha_policy not in ("fixed", "optimized"):
            raise ValueError(f"unknown alpha policy {cfg.alpha_policy!r}")
        return cfg

    def canonical_json(self) -> str:
        data = asdict(self)
        data["alphabets"] = list(self.alphabets)
        return json.dumps(data, sort_keys=True)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]


@dataclass
class MonthReport:
    ticker: str
    month: str
    n_outliers: int = 0
    n_slots: int = 0
    n_observed: int = 0
    alpha: float = math.nan
    staleness_present: bool | None = None
    n_flagged_missing: int = 0
    n_retained_zeros: int = 0
    arma_order: tuple | None = None
    entropy_3: float | None = None
    bound_3: float | None = None
    rate_3: float | None = None
    entropy_4: float | None = None
    bound_4: float | None = None
    rate_4: float | None = None
    inefficient: bool | None = None
    most_frequent_block_3: str | None = None
    most_frequent_block_4: str | None = None
    strategy_filtered: float | None = None
    strategy_original: float | None = None
    error_stage: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def month_verdict(residuals: np.ndarray, bound_cache: BoundCache,
                  alphabets=(3, 4)):
    """Entropy, bound and verdict for one interval's whitened returns.

    Returns the verdict and the per-alphabet block distributions (the
    source of the most-frequent-block report fields).
    """
    per_a = {}
    for a in alphabets:
        seq = entropy_mod.discretize_quantile(residuals, a)
        k = entropy_mod.select_block_length(seq)
        dist = entropy_mod.block_frequencies(seq, k)
        est = entropy_mod.entropy_estimate(dist)
        bound = bound_cache.get(dist.n_b + k - 1, a)
        per_a[a] = (est, bound, dist)
    est3, bound3, _ = per_a[3]
    est4, bound4, _ = per_a[4]
    verdict = classify_interval(est3.rate, bound3.bound, est4.rate, bound4.bound)
    return verdict, {a: per_a[a][2] for a in alphabets}


def _stage_header(stage: str, config: PipelineConfig) -> str:
    return f"# stage={stage} config={config.config_hash}\n"


class TickerAnalysis:
    """Whole-period state for one instrument: cleaned prices, seasonal
    profile, per-year whitening, and the per-month verdict pipeline."""

    def __init__(self, config: PipelineConfig, ticker: str, bars, bound_cache=None):
        self.config = config
        self.ticker = ticker
        self.bound_cache = bound_cache or BoundCache(
            n_sim=config.n_sim, seed=config.seed, l_tolerance=config.bound_l_tolerance
        )
        self._prepare(bars)

    def _prepare(self, bars) -> None:
        config = self.config
        series = ingest.build_price_series(
            bars, config.session, config.gap_threshold_minutes
        )
        series, report = ingest.detect_outliers(
            series, k=config.outlier_k, delta=config.outlier_delta,
            c=config.outlier_c, gamma=config.outlier_gamma,
        )
        report.split_slots = [ts for ts, _ in ingest.detect_splits(series)]
        self.series = series
        self.cleaning = report
        self.returns = ingest.log_returns(series)

        grid = series.grid
        self.minute_of_day = (
            grid.timestamps.hour * 60 + grid.timestamps.minute
        ).to_numpy()
        self.day_keys = grid.timestamps.normalize()
        self.month_keys = grid.timestamps.strftime("%Y-%m").to_numpy()
        self.year_keys = grid.timestamps.year.to_numpy()

        self.profile = self._build_profile()
        self.deseasonalized = np.full(len(grid), np.nan)
        self.standardized = np.full(len(grid), np.nan)
        self.residuals = np.full(len(grid), np.nan)
        self.month_state: dict[str, dict] = {}
        self.year_orders: dict[int, whiten.ArmaOrder] = {}
        self.year_diagnostics: dict[int, dict] = {}
        self._standardize_months()
        self._whiten_years()

    def _build_profile(self, before=None) -> whiten.SeasonalProfile:
        """Profile over the whole period, or over days strictly before
        ``before`` when the causal (trailing-window) mode asks for one."""
        if not hasattr(self, "_day_matrix"):
            minutes = np.unique(self.minute_of_day)
            col = {m: j for j, m in enumerate(minutes)}
            days = self.day_keys.unique()
            row = {d: i for i, d in enumerate(days)}
            matrix = np.full((len(days), len(minutes)), np.nan)
            for i in range(len(self.returns)):
                matrix[row[self.day_keys[i]], col[self.minute_of_day[i]]] = self.returns[i]
            self._day_matrix = matrix
            self._day_list = days
            self._profile_minutes = minutes
        matrix = self._day_matrix
        if before is not None:
            matrix = matrix[self._day_list < before]
        return whiten.intraday_profile(matrix, self._profile_minutes,
                                       mode=self.config.deseason_mode)

    def months(self) -> list[str]:
        return sorted(set(self.month_keys.tolist()))

    def _standardize_months(self) -> None:
        config = self.config
        for month in self.months():
            mask = self.month_keys == month
            idx = np.flatnonzero(mask)
            prices = self.series.prices[idx]
            state: dict = {"idx": idx}
            self.month_state[month] = state
            try:
                if config.causal_seasonality:
                    profile = self._build_profile(before=self.day_keys[idx[0]])
                else:
                    profile = self.profile
                xi = profile.xi_for(self.minute_of_day[idx])
                with np.errstate(invalid="ignore", divide="ignore"):
                    ret = self.returns[idx] / xi
                ret[~np.isfinite(ret)] = np.nan
                self.deseasonalized[idx] = ret
            except EntrometerError as exc:
                state["error"] = ("seasonality", str(exc))
                logger.warning("%s %s seasonality stage failed: %s",
                               self.ticker, month, exc)
                continue
            try:
                month_series = ingest.PriceSeries(grid=self.series.grid, prices=np.where(mask, self.series.prices, np.nan))
                tick = ingest.estimate_tick_size(month_series)
                state["tick"] = tick.value
                alpha = volstale.alpha_for_policy(
                    config.alpha_policy, config.alpha, ret, prices,
                    config.ewma_mode, tick.value,
                )
                ewma = volstale.EwmaConfig(alpha=alpha, mode=config.ewma_mode)
                trace, filtered, present = volstale.estimate_volatility(
                    ret, prices, ewma, tick.value,
                    check_significance=config.check_significance,
                )
                state.update(trace=trace, filtered=filtered,
                             staleness_present=present, alpha=alpha)
                std = filtered.values / trace.sigma
                std[~np.isfinite(std)] = np.nan
                self.standardized[idx] = std
            except EntrometerError as exc:
                state["error"] = ("volatility", str(exc))
                logger.warning("%s %s volatility stage failed: %s", self.ticker, month, exc)

    def _whiten_years(self) -> None:
        years = sorted(set(self.year_keys.tolist()))
        previous: whiten.ArmaOrder | None = None
        for year in years:
            if previous is None:
                order = whiten.SEED_ORDER
            else:
                order = previous
            self.year_orders[year] = order
            idx = np.flatnonzero(self.year_keys == year)
            segment = self.standardized[idx]
            try:
                whitened = whiten.arma_whiten(segment, order)
                self.residuals[idx] = whitened.residuals
                self.year_diagnostics[year] = {
                    "order": [order.p, order.q],
                    "loglik": whitened.loglik,
                    "bic": whitened.bic,
                }
            except EntrometerError as exc:
                self.year_diagnostics[year] = {"order": [order.p, order.q], "error": str(exc)}
                logger.warning("%s year %s whitening failed: %s", self.ticker, year, exc)
            try:
                previous = whiten.select_arma_order(segment)
            except EntrometerError:
                previous = order  # carry the last usable order forward

    def run_month(self, month: str) -> MonthReport:
        state = self.month_state.get(month)
        if state is None:
            return MonthReport(self.ticker, month, error_stage="ingest",
                               error="month not covered by input data")
        idx = state["idx"]
        slots = self.series.grid.timestamps[idx]
        report = MonthReport(
            ticker=self.ticker,
            month=month,
            n_outliers=sum(1 for ts in self.cleaning.outlier_slots
                           if ts.strftime("%Y-%m") == month),
            n_slots=len(idx),
            n_observed=int((~np.isnan(self.series.prices[idx])).sum()),
        )
        if "error" in state:
            report.error_stage, report.error = state["error"]
            return report
        trace = state["trace"]
        report.alpha = state["alpha"]
        report.staleness_present = state["staleness_present"]
        report.n_flagged_missing = int(trace.missing_mask.sum())
        report.n_retained_zeros = state["filtered"].n_retained_zeros
        year = int(month[:4])
        order = self.year_orders.get(year)
        report.arma_order = (order.p, order.q) if order else None

        residuals = self.residuals[idx]
        try:
            verdict, dists = month_verdict(residuals, self.bound_cache,
                                           self.config.alphabets)
            report.entropy_3, report.bound_3, report.rate_3 = (
                verdict.entropy_3, verdict.bound_3, verdict.rate_3)
            report.entropy_4, report.bound_4, report.rate_4 = (
                verdict.entropy_4, verdict.bound_4, verdict.rate_4)
            report.inefficient = verdict.inefficient
            report.most_frequent_block_3 = dists[3].most_frequent_block()
            report.most_frequent_block_4 = dists[4].most_frequent_block()
        except EntrometerError as exc:
            report.error_stage, report.error = "entropy", str(exc)
            return report

        try:
            report.strategy_filtered = evaluate_simple_strategy(residuals).fraction
            report.strategy_original = evaluate_simple_strategy(self.returns[idx]).fraction
        except EntrometerError as exc:
            report.error_stage, report.error = "strategy", str(exc)
        return report

    def run_all_months(self) -> list[MonthReport]:
        return [self.run_month(m) for m in self.months()]

    def persist(self, out_dir) -> None:
        """Write per-stage intermediates for audit."""
        config = self.config
        base = os.path.join(out_dir, self.ticker)
        os.makedirs(base, exist_ok=True)
        head = _stage_header("clean", config)
        lines = [head, "slot,price\n"]
        for ts, p in zip(self.series.grid.timestamps, self.series.prices):
            lines.append(f"{ts},{'' if math.isnan(p) else repr(float(p))}\n")
        _atomic_write(os.path.join(base, "cleaned.csv"), "".join(lines))
        _atomic_write(
            os.path.join(base, "cleaning_report.json"),
            json.dumps(self.cleaning.to_dict(), sort_keys=True, indent=1),
        )
        lines = [_stage_header("seasonality", config), "minute,xi\n"]
        for m, x in zip(self.profile.minutes, self.profile.xi):
            lines.append(f"{int(m)},{repr(float(x))}\n")
        _atomic_write(os.path.join(base, "profile.csv"), "".join(lines))
        lines = [_stage_header("whiten", config), "slot,standardized,residual\n"]
        for i, ts in enumerate(self.series.grid.timestamps):
            s, r = self.standardized[i], self.residuals[i]
            lines.append(
                f"{ts},{'' if math.isnan(s) else repr(float(s))},"
                f"{'' if math.isnan(r) else repr(float(r))}\n"
            )
        _atomic_write(os.path.join(base, "residuals.csv"), "".join(lines))
        _atomic_write(
            os.path.join(base, "arma_diagnostics.json"),
            json.dumps({str(y): d for y, d in self.year_diagnostics.items()},
                       sort_keys=True, indent=1),
        )


def run_month_pipeline(config: PipelineConfig, ticker: str, month: str,
                       bars=None) -> MonthReport:
    """Single-month convenience entry point (builds the ticker context)."""
    if bars is None:
        bars = [b for b in ingest.parse_price_csv(config.input, config.columns or None)
                if b.ticker == ticker]
    try:
        analysis = TickerAnalysis(config, ticker, bars)
    except EntrometerError as exc:
        return MonthReport(ticker, month, error_stage="ingest", error=str(exc))
    return analysis.run_month(month)


def emit_reports(reports: list[MonthReport], out_dir, config: PipelineConfig) -> list[str]:
    """Write the aggregate CSV surfaces; returns the file paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def fmt(x, spec="repr"):
        if x is None or (isinstance(x, float) and math.isnan(x)):
            return ""
        if isinstance(x, float):
            return repr(x)
        return str(x)

    rows = sorted(reports, key=lambda r: (r.ticker, r.month))

    path = os.path.join(out_dir, "verdicts.csv")
    lines = [_stage_header("report", config),
             "ticker,month,entropy3,bound3,rate3,entropy4,bound4,rate4,inefficient\n"]
    for r in rows:
        flag = "" if r.inefficient is None else int(r.inefficient)
        lines.append(
            f"{r.ticker},{r.month},{fmt(r.entropy_3)},{fmt(r.bound_3)},{fmt(r.rate_3)},"
            f"{fmt(r.entropy_4)},{fmt(r.bound_4)},{fmt(r.rate_4)},{flag}\n"
        )
    _atomic_write(path, "".join(lines))
    written.append(path)

    path = os.path.join(out_dir, "degree.csv")
    lines = [_stage_header("report", config),
             "ticker,months,degree,degree_3_only,degree_4_only\n"]
    for ticker in sorted({r.ticker for r in rows}):
        scored = [r for r in rows if r.ticker == ticker and r.inefficient is not None]
        if not scored:
            continue
        degree = degree_of_inefficiency(scored)
        d3 = sum(1 for r in scored if r.rate_3 < 1.0) / len(scored)
        d4 = sum(1 for r in scored if r.rate_4 < 1.0) / len(scored)
        lines.append(f"{ticker},{len(scored)},{degree!r},{d3!r},{d4!r}\n")
    _atomic_write(path, "".join(lines))
    written.append(path)

    path = os.path.join(out_dir, "strategy.csv")
    lines = [_stage_header("report", config),
             "ticker,month,most_frequent_block_3,most_frequent_block_4,"
             "success_filtered,success_original\n"]
    for r in rows:
        lines.append(
            f"{r.ticker},{r.month},{fmt(r.most_frequent_block_3)},"
            f"{fmt(r.most_frequent_block_4)},{fmt(r.strategy_filtered)},"
            f"{fmt(r.strategy_original)}\n"
        )
    _atomic_write(path, "".join(lines))
    written.append(path)

    path = os.path.join(out_dir, "month_reports.json")
    payload = json.dumps([r.to_dict() for r in rows], sort_keys=True, indent=1)
    _atomic_write(path, payload)
    written.append(path)
    return written


def cluster_outputs(residuals_by_ticker: dict[str, np.ndarray], out_dir,
                    config: PipelineConfig) -> list[str]:
    """KL-distance and co-movement clustering surfaces from residual series."""
    os.makedirs(out_dir, exist_ok=True)
    tickers = sorted(residuals_by_ticker)
    if len(tickers) < 2:
        raise EntrometerError("clustering needs at least two instruments")
    written = []

    sequences = {
        t: entropy_mod.discretize_quantile(residuals_by_ticker[t], 4) for t in tickers
    }
    n = len(tickers)
    kl = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dp, dq = cluster_mod.paired_block_distributions(
                sequences[tickers[i]], sequences[tickers[j]]
            )
            kl[i, j] = kl[j, i] = cluster_mod.kl_distance(dp, dq)
    kl_matrix = cluster_mod.DistanceMatrix(tickers, kl)

    co = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            co[i, j] = co[j, i] = cluster_mod.comovement_entropy(
                residuals_by_ticker[tickers[i]], residuals_by_ticker[tickers[j]]
            )
    co_matrix = cluster_mod.DistanceMatrix(tickers, co)

    for name, matrix in (("kl_distance", kl_matrix), ("comovement", co_matrix)):
        path = os.path.join(out_dir, f"{name}_matrix.csv")
        matrix.to_csv(path)
        written.append(path)
        tree = cluster_mod.upgma(matrix)
        path = os.path.join(out_dir, f"{name}_dendrogram.csv")
        tree.to_csv(path)
        written.append(path)
        path = os.path.join(out_dir, f"{name}_dendrogram.newick")
        _atomic_write(path, tree.newick() + "\n")
        written.append(path)
    return written
