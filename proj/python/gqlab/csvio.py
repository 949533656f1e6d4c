"""Readers for the experiment output directory consumed by plotting code.

Layout written by ``gqlab run``::

    <dir>/runs/run_<id>.csv   one row per record, RUN_COLUMNS then theta_<i>
    <dir>/aggregate.csv       mean and variance per (config_key, tick)
    <dir>/cases.csv           case label per sigma schedule
    <dir>/summary.txt         text summary
    <dir>/metadata.json       record mode, timestamps and config echo
"""

import csv
import json
from pathlib import Path

RUN_COLUMNS = (
    "run_id", "config_key", "learner", "step_sizes", "sigma_schedule", "seed", "episode", "step",
    "sigma", "mspbe", "episode_return", "episode_length", "theta_norm", "diverged",
)
AGGREGATE_COLUMNS = (
    "config_key", "learner", "step_sizes", "sigma_schedule", "tick", "n", "mean_sigma", "var_sigma",
    "mean_mspbe", "var_mspbe", "mean_return", "var_return", "mean_length", "var_length",
    "mean_theta_norm", "var_theta_norm", "diverged_fraction",
)
CASES_COLUMNS = ("group", "sigma_schedule", "score", "case")

_TEXT = {"config_key", "learner", "step_sizes", "sigma_schedule", "group", "case"}
_INTEGER = {"run_id", "seed", "episode", "step", "episode_length", "diverged", "tick", "n"}


def _convert(name, value):
    if name in _TEXT:
        return value
    return int(value) if name in _INTEGER else float(value)


def read_table(path, required):
    """Reads a CSV into a dict of column lists, checking the required header prefix."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header[: len(required)]) != tuple(required):
            raise ValueError(f"{path}: unexpected header {header}")
        columns = {name: [] for name in header}
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}: row has {len(row)} fields, expected {len(header)}")
            for name, value in zip(header, row):
                columns[name].append(_convert(name, value))
    return columns


def read_experiment(directory):
    """Loads every table of an experiment output directory."""
    directory = Path(directory)
    runs = [read_table(p, RUN_COLUMNS) for p in sorted((directory / "runs").glob("run_*.csv"))]
    if not runs:
        raise ValueError(f"{directory}: no run CSVs")
    return {
        "runs": runs,
        "aggregate": read_table(directory / "aggregate.csv", AGGREGATE_COLUMNS),
        "cases": read_table(directory / "cases.csv", CASES_COLUMNS),
        "summary": (directory / "summary.txt").read_text(),
        "metadata": json.loads((directory / "metadata.json").read_text()),
    }
