"""Raw bar parsing, session-grid construction and price cleaning.

Input is one-minute close-price bars.  The grid keeps only main-session
minutes, collapses overnight boundaries and no-trade gaps longer than a
threshold into single one-minute steps, and leaves short no-trade minutes
as absent prices.  Cleaning removes outliers against a trimmed local
window and warns on unadjusted splits.
"""

from __future__ import annotations

import bisect
import io
import logging
import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta

import numpy as np
import pandas as pd

from .errors import (
    DegenerateInputError,
    EmptyInputError,
    InsufficientDataError,
    ParseError,
)

logger = logging.getLogger(__name__)

SESSION_START = time(10, 0)
SESSION_END = time(18, 40)
GAP_THRESHOLD_MINUTES = 120

DEFAULT_COLUMNS = {"ticker": "ticker", "date": "date", "time": "time", "close": "close"}


@dataclass(frozen=True)
class RawBar:
    ticker: str
    timestamp: datetime
    close: float


@dataclass(frozen=True)
class TickSize:
    """Minimal price increment and its fractional digit count."""

    value: float
    decimals: int

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("tick size must be positive")


@dataclass
class SessionGrid:
    """Ordered in-session minute slots with market-closure markers.

    ``closure[i]`` is True when the step into slot i is not a plain
    one-minute step (series start, overnight boundary, or a collapsed
    no-trade gap).  Every step carries the same duration
    ``delta_minutes`` = 1.
    """

    timestamps: pd.DatetimeIndex
    session_start: time
    session_end: time
    gap_threshold_minutes: int
    delta_minutes: float = 1.0

    @property
    def closure(self) -> np.ndarray:
        ts = self.timestamps.asi8
        out = np.ones(len(ts), dtype=bool)
        if len(ts) > 1:
            one_minute = 60_000_000_000
            out[1:] = np.diff(ts) != one_minute
        return out

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class PriceSeries:
    """Prices on the session grid; NaN marks no-trade or removed slots."""

    grid: SessionGrid
    prices: np.ndarray
    tick: TickSize | None = None

    def present_mask(self) -> np.ndarray:
        return ~np.isnan(self.prices)

    def n_present(self) -> int:
        return int(self.present_mask().sum())


@dataclass
class CleaningReport:
    n_input: int
    n_output: int
    outlier_slots: list = field(default_factory=list)
    split_slots: list = field(default_factory=list)

    @property
    def n_outliers(self) -> int:
        return len(self.outlier_slots)

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_output": self.n_output,
            "n_outliers": self.n_outliers,
            "outlier_slots": [str(s) for s in self.outlier_slots],
            "split_warnings": [str(s) for s in self.split_slots],
        }


def _normalize_header(name: str) -> str:
    return name.strip().strip("<>").lower()


def parse_price_csv(source, columns: dict | None = None) -> list[RawBar]:
    """Parse delimited bar data into RawBar records (file order, keep-last
    on duplicate ticker/timestamp).

    ``source`` is a path or a text/byte stream with a header row naming
    the ticker, date (YYYYMMDD), time (HHMMSS) and close columns.
    ``columns`` may remap those logical names to actual header names.
    """
    colmap = dict(DEFAULT_COLUMNS)
    if columns:
        colmap.update(columns)

    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        fh = open(source, "r", encoding="utf-8")
        own = True
    elif isinstance(source, io.TextIOBase):
        fh, own = source, False
    else:
        fh, own = io.TextIOWrapper(source, encoding="utf-8"), False

    try:
        header_line = fh.readline()
        if not header_line.strip():
            raise EmptyInputError("input has no header row")
        header = [_normalize_header(h) for h in header_line.strip().split(",")]
        try:
            idx = {
                key: header.index(_normalize_header(colmap[key]))
                for key in ("ticker", "date", "time", "close")
            }
        except ValueError as exc:
            raise ParseError(1, f"missing required column: {exc}") from None

        bars: dict[tuple[str, datetime], float] = {}
        order: list[tuple[str, datetime]] = []
        n_rows = 0
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            try:
                ticker = fields[idx["ticker"]].strip()
                date_s = fields[idx["date"]].strip()
                time_s = fields[idx["time"]].strip()
                close = float(fields[idx["close"]])
            except (IndexError, ValueError) as exc:
                raise ParseError(line_no, f"malformed row: {exc}") from None
            if close <= 0 or not math.isfinite(close):
                raise ParseError(line_no, f"non-positive close {close!r}")
            try:
                ts = datetime.strptime(date_s + time_s.zfill(6), "%Y%m%d%H%M%S")
            except ValueError:
                raise ParseError(line_no, f"unparseable timestamp {date_s} {time_s}") from None
            ts = ts.replace(second=0)
            key = (ticker, ts)
            if key in bars:
                logger.warning("duplicate bar for %s at %s: keeping last", ticker, ts)
            else:
                order.append(key)
            bars[key] = close
            n_rows += 1
        if n_rows == 0:
            raise EmptyInputError("no data rows in input")
        return [RawBar(t, ts, bars[(t, ts)]) for t, ts in order]
    finally:
        if own:
            fh.close()


def build_session_grid(
    bars: list[RawBar],
    session: tuple[time, time] = (SESSION_START, SESSION_END),
    gap_threshold_minutes: int = GAP_THRESHOLD_MINUTES,
) -> SessionGrid:
    """Minute grid over the trading days present in ``bars``.

    Minutes strictly inside a no-trade gap longer than the threshold are
    dropped (market closure); overnight boundaries collapse the same way,
    so consecutive grid slots around a closure are one step apart.
    """
    start_t, end_t = session
    stamps = sorted({b.timestamp for b in bars if start_t <= b.timestamp.time() <= end_t})
    if not stamps:
        raise EmptyInputError("no in-session bars")

    # A non-traded minute survives only when the no-trade interval holding
    # it (between the surrounding traded minutes) is within the threshold;
    # longer stretches, overnight spans and the series edges are closures.
    threshold = timedelta(minutes=gap_threshold_minutes)
    one_minute = timedelta(minutes=1)
    slots: list[datetime] = []
    days = sorted({ts.date() for ts in stamps})
    stamp_set = set(stamps)
    for day in days:
        t0 = datetime.combine(day, start_t)
        t1 = datetime.combine(day, end_t)
        s = t0
        while s <= t1:
            if s in stamp_set:
                slots.append(s)
            else:
                j = bisect.bisect_left(stamps, s)
                nxt = stamps[j] if j < len(stamps) else None
                prv = stamps[j - 1] if j > 0 else None
                if prv is not None and nxt is not None and nxt - prv <= threshold:
                    slots.append(s)
            s += one_minute

    return SessionGrid(
        timestamps=pd.DatetimeIndex(slots),
        session_start=start_t,
        session_end=end_t,
        gap_threshold_minutes=gap_threshold_minutes,
    )


def build_price_series(
    bars: list[RawBar],
    session: tuple[time, time] = (SESSION_START, SESSION_END),
    gap_threshold_minutes: int = GAP_THRESHOLD_MINUTES,
    tick: TickSize | None = None,
) -> PriceSeries:
    """Grid construction plus slot-aligned prices for one instrument."""
    grid = build_session_grid(bars, session, gap_threshold_minutes)
    prices = np.full(len(grid), np.nan)
    lookup = {ts: i for i, ts in enumerate(grid.timestamps.to_pydatetime())}
    start_t, end_t = session
    for bar in bars:
        if start_t <= bar.timestamp.time() <= end_t:
            prices[lookup[bar.timestamp]] = bar.close
    return PriceSeries(grid=grid, prices=prices, tick=tick)


def _nearest_window(positions: np.ndarray, j: int, k: int) -> list[int]:
    """Indices (into positions) of the k present prices nearest in slot
    index to positions[j], excluding j; ties prefer the earlier slot."""
    m = len(positions)
    left, right = j - 1, j + 1
    picked = []
    while len(picked) < k and (left >= 0 or right < m):
        if left < 0:
            picked.append(right)
            right += 1
        elif right >= m:
            picked.append(left)
            left -= 1
        else:
            dl = positions[j] - positions[left]
            dr = positions[right] - positions[j]
            if dl <= dr:
                picked.append(left)
                left -= 1
            else:
                picked.append(right)
                right += 1
    return picked


def detect_outliers(
    series: PriceSeries,
    k: int = 20,
    delta: float = 5.0,
    c: float = 5.0,
    gamma: float = 0.05,
) -> tuple[PriceSeries, CleaningReport]:
    """Remove prices too far from a delta-trimmed local mean.

    A price is dropped when |P - mean| >= c * std + gamma, where mean and
    std (sample denominator) are computed over the k present prices
    nearest in slot index, excluding the price itself, after discarding
    the ceil(delta% * k) lowest and highest values.  All decisions use the
    original data; removals happen together afterwards.
    """
    prices = series.prices
    present = np.flatnonzero(~np.isnan(prices))
    if len(present) < k + 1:
        raise InsufficientDataError(f"need at least {k + 1} present prices")
    values = prices[present]
    n_trim = math.ceil(delta / 100.0 * k)
    drop = []
    for j in range(len(present)):
        window = values[_nearest_window(present, j, k)]
        window.sort()
        trimmed = window[n_trim: len(window) - n_trim] if n_trim else window
        mean = trimmed.mean()
        std = statistics.stdev(trimmed) if len(trimmed) > 1 else 0.0
        if abs(values[j] - mean) >= c * std + gamma:
            drop.append(j)

    cleaned = prices.copy()
    slots = []
    for j in drop:
        cleaned[present[j]] = np.nan
        slots.append(series.grid.timestamps[present[j]])
    report = CleaningReport(
        n_input=len(present), n_output=len(present) - len(drop), outlier_slots=slots
    )
    out = PriceSeries(grid=series.grid, prices=cleaned, tick=series.tick)
    return out, report


def detect_splits(series: PriceSeries, threshold: float = 0.2) -> list:
    """Slots whose present-to-present log return exceeds the threshold in
    absolute value (unadjusted split suspects); the series is unchanged."""
    prices = series.prices
    present = np.flatnonzero(~np.isnan(prices))
    warnings = []
    for a, b in zip(present, present[1:]):
        r = math.log(prices[b] / prices[a])
        if abs(r) > threshold:
            warnings.append((series.grid.timestamps[b], r))
    return warnings


def _fractional_digits(values: np.ndarray, max_decimals: int = 10) -> int:
    for d in range(max_decimals + 1):
        scaled = values * 10.0**d
        if np.all(np.abs(scaled - np.round(scaled)) < 1e-6):
            return d
    return max_decimals


def estimate_tick_size(series: PriceSeries) -> TickSize:
    """Most frequent increment between sorted distinct prices.

    Step 1 finds the number of fractional digits; step 2 takes the mode of
    consecutive differences of the distinct sorted prices, ties broken
    toward the smaller increment.
    """
    values = series.prices[series.present_mask()]
    distinct = np.unique(values)
    if len(distinct) < 2:
        raise DegenerateInputError("all prices identical; supply the tick explicitly")
    decimals = _fractional_digits(distinct)
    ints = np.round(np.sort(distinct) * 10.0**decimals).astype(np.int64)
    diffs = np.diff(np.unique(ints))
    steps, counts = np.unique(diffs, return_counts=True)
    best = steps[counts == counts.max()].min()
    return TickSize(value=float(best) / 10.0**decimals, decimals=decimals)


def log_returns(series: PriceSeries) -> np.ndarray:
    """Slot-aligned log returns between consecutive present prices.

    ret[i] = ln(P_i / P_j) with j the previous present slot; NaN at
    missing slots and at the first present slot.
    """
    prices = series.prices
    ret = np.full(prices.shape, np.nan)
    present = np.flatnonzero(~np.isnan(prices))
    if len(present) >= 2:
        ret[present[1:]] = np.log(prices[present[1:]] / prices[present[:-1]])
    return ret


def series_to_csv(series: PriceSeries, path, header: str = "") -> None:
    """Cleaned series as CSV: slot timestamp, price or empty."""
    with open(path, "w") as fh:
        if header:
            fh.write(header)
        fh.write("slot,price\n")
        for ts, p in zip(series.grid.timestamps, series.prices):
            fh.write(f"{ts},{'' if math.isnan(p) else repr(float(p))}\n")
