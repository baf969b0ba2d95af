"""Reproduction harness: data, baselines, benchmarks and the command line."""

from .baselines import GlobalGcnConfig, global_gcn_baseline, knn_average_baseline, knn_average_many
from .benchmark import BenchmarkConfig, MethodResult, MetricsReport, k_sweep, run_benchmark
from .data import LoadReport, Schema, load_csv, split_half, synth_gp

__all__ = [
    "BenchmarkConfig", "GlobalGcnConfig", "LoadReport", "MethodResult", "MetricsReport", "Schema",
    "global_gcn_baseline", "k_sweep", "knn_average_baseline", "knn_average_many", "load_csv",
    "run_benchmark", "split_half", "synth_gp",
]
