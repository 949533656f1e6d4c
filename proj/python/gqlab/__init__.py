"""GQ(sigma, lambda) learning laboratory."""

from ._gqlab import (
    ConfigError,
    GqlabError,
    IoError,
    Oracle,
    SingularMatrix,
    TileCoder,
    classify_cases,
    mountain_car_step,
    run_experiment,
    state_values,
    summarize,
)
from .csvio import RUN_COLUMNS, AGGREGATE_COLUMNS, CASES_COLUMNS, read_experiment, read_table

__all__ = [
    "AGGREGATE_COLUMNS",
    "CASES_COLUMNS",
    "ConfigError",
    "GqlabError",
    "IoError",
    "Oracle",
    "RUN_COLUMNS",
    "SingularMatrix",
    "TileCoder",
    "classify_cases",
    "mountain_car_step",
    "read_experiment",
    "read_table",
    "run_experiment",
    "state_values",
    "summarize",
]
