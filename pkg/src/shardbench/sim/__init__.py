"""Discrete-event harness: configs, workloads, scheme drivers, metrics."""
from .config import ExperimentConfig, config_from_mapping, load_config
from .metrics import Collector, MetricsReport, build_report, export_results
from .runner import RunArtifacts, run_experiment, simulate_experiment
from .workload import Topology, WorkItem, generate_workload, load_trace

__all__ = [
    "Collector", "ExperimentConfig", "MetricsReport", "RunArtifacts", "Topology", "WorkItem",
    "build_report", "config_from_mapping", "export_results", "generate_workload", "load_config",
    "load_trace", "run_experiment", "simulate_experiment",
]
