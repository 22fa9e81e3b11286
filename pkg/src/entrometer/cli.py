"""Batch command-line interface.

Subcommands mirror the pipeline stages: ``ingest`` cleans raw bars,
``whiten`` produces residual series, ``analyze`` runs the full per-month
verdict pipeline, ``cluster``/``strategy``/``report`` emit the aggregate
surfaces, and ``simulate`` runs the synthetic estimator benchmark.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click

from . import ingest, pipeline, simlab, volstale
from .errors import EntrometerError

logger = logging.getLogger(__name__)


def _load_config(ctx) -> pipeline.PipelineConfig:
    params = ctx.obj
    overrides = {
        "seed": params.get("seed"),
        "out": params.get("out"),
        "jobs": params.get("jobs"),
    }
    if params.get("config"):
        return pipeline.PipelineConfig.from_json(params["config"], **overrides)
    clean = {k: v for k, v in overrides.items() if v is not None}
    return pipeline.PipelineConfig(**clean)


def _fail(stage: str, exc: Exception):
    click.echo(f"error[{stage}]: {exc}", err=True)
    sys.exit(1)


def _bars_by_ticker(config: pipeline.PipelineConfig, input_path: str | None):
    path = input_path or config.input
    if not path:
        raise EntrometerError("no input file given (--input or config.input)")
    bars = ingest.parse_price_csv(path, config.columns or None)
    grouped: dict[str, list] = {}
    for bar in bars:
        grouped.setdefault(bar.ticker, []).append(bar)
    return grouped


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None,
              help="JSON config file (flat key/value tree).")
@click.option("--seed", type=int, default=None, help="Master seed for all stochastic stages.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--jobs", type=int, default=None, help="Parallel worker count.")
@click.pass_context
def main(ctx, config, seed, out, jobs):
    """Statistical-efficiency analysis of one-minute price series."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config, "seed": seed, "out": out, "jobs": jobs}


@main.command("ingest")
@click.option("--input", "input_path", type=click.Path(exists=True), default=None)
@click.pass_context
def ingest_cmd(ctx, input_path):
    """Parse, clean and persist price series per instrument."""
    config = _load_config(ctx)
    try:
        grouped = _bars_by_ticker(config, input_path)
    except (EntrometerError, OSError) as exc:
        _fail("ingest", exc)
    os.makedirs(config.out, exist_ok=True)
    for ticker, bars in sorted(grouped.items()):
        try:
            series = ingest.build_price_series(bars, config.session,
                                               config.gap_threshold_minutes)
            series, report = ingest.detect_outliers(
                series, k=config.outlier_k, delta=config.outlier_delta,
                c=config.outlier_c, gamma=config.outlier_gamma,
            )
            report.split_slots = [ts for ts, _ in ingest.detect_splits(series)]
        except EntrometerError as exc:
            _fail("ingest", f"{ticker}: {exc}")
        base = os.path.join(config.out, ticker)
        os.makedirs(base, exist_ok=True)
        ingest.series_to_csv(series, os.path.join(base, "cleaned.csv"),
                             header=pipeline._stage_header("clean", config))
        with open(os.path.join(base, "cleaning_report.json"), "w") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
        click.echo(f"{ticker}: {report.n_input} -> {report.n_output} prices, "
                   f"{report.n_outliers} outliers removed")


def _ticker_worker(args):
    config, ticker, bars, persist_traces = args
    analysis = pipeline.TickerAnalysis(config, ticker, bars)
    analysis.persist(config.out)
    if persist_traces:
        base = os.path.join(config.out, ticker, "traces")
        os.makedirs(base, exist_ok=True)
        for month, state in analysis.month_state.items():
            if "trace" in state:
                volstale.trace_to_csv(
                    state["trace"],
                    analysis.series.grid.timestamps[state["idx"]],
                    os.path.join(base, f"{month}.csv"),
                    header=pipeline._stage_header("volatility", config),
                )
    return [r.to_dict() for r in analysis.run_all_months()]


def _run_analysis(config, grouped, persist_traces):
    tasks = [(config, t, b, persist_traces) for t, b in sorted(grouped.items())]
    reports = []
    if config.jobs and config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for result in pool.map(_ticker_worker, tasks):
                reports.extend(result)
    else:
        for task in tasks:
            reports.extend(_ticker_worker(task))
    return [pipeline.MonthReport(**{k: tuple(v) if k == "arma_order" and v else v
                                    for k, v in r.items()}) for r in reports]


@main.command("whiten")
@click.option("--input", "input_path", type=click.Path(exists=True), default=None)
@click.pass_context
def whiten_cmd(ctx, input_path):
    """Clean, deseasonalize, standardize and write residual series."""
    config = _load_config(ctx)
    try:
        grouped = _bars_by_ticker(config, input_path)
        for ticker, bars in sorted(grouped.items()):
            analysis = pipeline.TickerAnalysis(config, ticker, bars)
            analysis.persist(config.out)
            click.echo(f"{ticker}: residuals written "
                       f"({len(analysis.months())} months)")
    except (EntrometerError, OSError) as exc:
        _fail("whiten", exc)


@main.command("analyze")
@click.option("--input", "input_path", type=click.Path(exists=True), default=None)
@click.option("--traces/--no-traces", default=True,
              help="Persist per-month estimator traces.")
@click.pass_context
def analyze_cmd(ctx, input_path, traces):
    """Full pipeline: verdicts, strategy and reports for every month."""
    config = _load_config(ctx)
    try:
        grouped = _bars_by_ticker(config, input_path)
        reports = _run_analysis(config, grouped, traces)
        written = pipeline.emit_reports(reports, config.out, config)
    except (EntrometerError, OSError) as exc:
        _fail("analyze", exc)
    for path in written:
        click.echo(f"wrote {path}")


def _read_reports(config) -> list[pipeline.MonthReport]:
    path = os.path.join(config.out, "month_reports.json")
    if not os.path.exists(path):
        raise EntrometerError(f"{path} not found; run analyze first")
    with open(path) as fh:
        data = json.load(fh)
    return [pipeline.MonthReport(**{k: tuple(v) if k == "arma_order" and v else v
                                    for k, v in r.items()}) for r in data]


@main.command("report")
@click.pass_context
def report_cmd(ctx):
    """Re-emit the degree/verdict/strategy tables from stored reports."""
    config = _load_config(ctx)
    try:
        reports = _read_reports(config)
        written = pipeline.emit_reports(reports, config.out, config)
    except (EntrometerError, OSError) as exc:
        _fail("report", exc)
    for path in written:
        click.echo(f"wrote {path}")


@main.command("strategy")
@click.pass_context
def strategy_cmd(ctx):
    """Print per-month strategy success fractions from stored reports."""
    config = _load_config(ctx)
    try:
        reports = _read_reports(config)
    except (EntrometerError, OSError) as exc:
        _fail("strategy", exc)
    for r in sorted(reports, key=lambda r: (r.ticker, r.month)):
        if r.strategy_filtered is not None:
            click.echo(f"{r.ticker} {r.month}: filtered={r.strategy_filtered:.3f} "
                       f"original={r.strategy_original:.3f} "
                       f"block4={r.most_frequent_block_4}")


def _read_residuals(config, ticker):
    import numpy as np

    path = os.path.join(config.out, ticker, "residuals.csv")
    values = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("slot,"):
                continue
            parts = line.rstrip("\n").split(",")
            values.append(float(parts[2]) if parts[2] else np.nan)
    return np.array(values)


@main.command("cluster")
@click.pass_context
def cluster_cmd(ctx):
    """Distance matrices and dendrograms from persisted residuals."""
    config = _load_config(ctx)
    try:
        tickers = sorted(
            d for d in os.listdir(config.out)
            if os.path.exists(os.path.join(config.out, d, "residuals.csv"))
        )
        residuals = {t: _read_residuals(config, t) for t in tickers}
        written = pipeline.cluster_outputs(residuals, config.out, config)
    except (EntrometerError, OSError) as exc:
        _fail("cluster", exc)
    for path in written:
        click.echo(f"wrote {path}")


@main.command("simulate")
@click.option("--replicates", type=int, default=100)
@click.option("--n-half", type=int, default=100_000)
@click.option("--models", default="all",
              help="Comma-separated sigmaX,prY pairs joined by ';', or 'all'.")
@click.option("--variants", default="optimized,fixed,unfiltered")
@click.pass_context
def simulate_cmd(ctx, replicates, n_half, models, variants):
    """Synthetic estimator benchmark (volatility and staleness tables)."""
    config = _load_config(ctx)
    if models == "all":
        grid = simlab.MODEL_GRID
    else:
        grid = []
        for pair in models.split(";"):
            vol, stale = pair.split(",")
            grid.append((vol.strip(), stale.strip()))
    configs = [
        simlab.SimModelConfig(n_half=n_half, volatility=v, staleness=p)
        for v, p in grid
    ]
    try:
        rows = simlab.benchmark_estimators(
            configs, replicates, master_seed=config.seed,
            variants=tuple(variants.split(",")), jobs=config.jobs,
        )
    except EntrometerError as exc:
        _fail("simulate", exc)
    os.makedirs(config.out, exist_ok=True)
    vol_path = os.path.join(config.out, "volatility_table.csv")
    stale_path = os.path.join(config.out, "staleness_table.csv")
    simlab.write_volatility_table(rows, vol_path)
    simlab.write_staleness_table(rows, stale_path)
    click.echo(f"wrote {vol_path}")
    click.echo(f"wrote {stale_path}")


if __name__ == "__main__":
    main()
