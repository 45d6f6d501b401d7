"""Experiment orchestration, energy ingestion and reporting."""

from .energy import EnergySummary, TraceError, ingest_energy_trace, integrate_power, load_trace
from .experiment import (
    METRICS,
    Aggregate,
    ExperimentConfig,
    ExperimentResult,
    Repetition,
    RepetitionFailed,
    RunMetrics,
    compute_metrics,
    run_experiment,
    run_grid,
    run_repetition,
)
from .grid import GridError, expand_grid, load_grid, parse_grid
from .report import emit_report, points_from_metrics, read_metrics_csv, report_json
from .subscriber import Collected, SubscribeConfig, subscribe_collect

__all__ = [
    "METRICS", "Aggregate", "Collected", "EnergySummary", "ExperimentConfig", "ExperimentResult",
    "GridError", "Repetition", "RepetitionFailed", "RunMetrics", "SubscribeConfig", "TraceError",
    "compute_metrics", "emit_report", "expand_grid", "ingest_energy_trace", "integrate_power",
    "load_grid", "load_trace", "parse_grid", "points_from_metrics", "read_metrics_csv",
    "report_json", "run_experiment", "run_grid", "run_repetition", "subscribe_collect",
]
