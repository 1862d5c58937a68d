"""Sparse multi-modal cellular-graph survival models."""

import json as _json

from ._cellsurv import (
    CellsurvError,
    ConfigError,
    DataError,
    DegenerateInputError,
    NumericalError,
    ValidationError,
    bcp_sample_batch,
    build_knn_graph,
    chi_square_sf,
    commands,
    concordance_index,
    cox_loss,
    default_config,
    generate_synthetic,
    kaplan_meier,
    logrank_test,
)
from . import _cellsurv

__all__ = [
    "CellsurvError",
    "ConfigError",
    "DataError",
    "DegenerateInputError",
    "NumericalError",
    "ValidationError",
    "bcp_sample_batch",
    "build_knn_graph",
    "chi_square_sf",
    "commands",
    "concordance_index",
    "cox_loss",
    "default_config",
    "generate_synthetic",
    "kaplan_meier",
    "logrank_test",
    "run",
]


def _stringify(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_stringify(v) for v in value)
    if value is None:
        return "uniform"
    return str(value)


def run(command, **overrides):
    """Run a pipeline command with config overrides; returns (run_dir, report dict)."""
    run_dir, report = _cellsurv.run_command(command, {k: _stringify(v) for k, v in overrides.items()})
    return run_dir, _json.loads(report)
