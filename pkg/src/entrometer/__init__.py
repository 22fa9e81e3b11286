"""Statistical-efficiency measurement for intraday price series.

Cleans and whitens one-minute prices, estimates volatility jointly with
price staleness, scores intervals by bias-corrected block entropy against
Monte Carlo bounds, and clusters instruments by entropy distances.
"""

from .cluster import DistanceMatrix, Dendrogram, comovement_entropy, cut_dendrogram, kl_distance, upgma
from .efficiency import (
    BoundCache,
    EfficiencyBound,
    IntervalVerdict,
    StrategyResult,
    classify_interval,
    degree_of_inefficiency,
    evaluate_simple_strategy,
    mc_entropy_bound,
)
from .entropy import (
    BlockDistribution,
    EntropyEstimate,
    SymbolSequence,
    block_frequencies,
    discretize_pair,
    discretize_quantile,
    entropy_estimate,
    select_block_length,
)
from .ingest import (
    CleaningReport,
    PriceSeries,
    RawBar,
    SessionGrid,
    TickSize,
    build_price_series,
    build_session_grid,
    detect_outliers,
    detect_splits,
    estimate_tick_size,
    log_returns,
    parse_price_csv,
)
from .pipeline import MonthReport, PipelineConfig, TickerAnalysis, emit_reports, run_month_pipeline
from .simlab import BenchmarkRow, SimModelConfig, SimPath, benchmark_estimators, markov_fixture, simulate_observed_price
from .volstale import (
    EwmaConfig,
    FilteredReturns,
    StalenessVolatilityTrace,
    estimate_volatility,
    ewma_update,
    filter_and_estimate,
    optimize_alpha,
    rounding_zero_prob,
    staleness_significance,
)
from .whiten import ArmaOrder, SeasonalProfile, WhitenedSeries, arma_whiten, deseasonalize, intraday_profile, select_arma_order

__version__ = "0.1.0"
