"""Config-driven experiments, serialized outputs and the command line."""

from .cli import main
from .config import SCENARIOS, ConfigError, ExperimentConfig, load_config, make_truth, parse_density
from .runner import (
    TRACE_COLUMNS,
    TRACE_SCHEMA,
    Result,
    generate_data,
    make_prior,
    read_trace_csv,
    replay_check,
    replicate_rng,
    run,
    run_chi_sq,
    run_consistency,
    run_martingale,
    run_summability,
    write_result,
)

__all__ = [
    "main", "SCENARIOS", "ConfigError", "ExperimentConfig", "load_config", "make_truth", "parse_density",
    "TRACE_COLUMNS", "TRACE_SCHEMA", "Result", "generate_data", "make_prior", "read_trace_csv",
    "replay_check", "replicate_rng", "run", "run_chi_sq", "run_consistency", "run_martingale",
    "run_summability", "write_result",
]
