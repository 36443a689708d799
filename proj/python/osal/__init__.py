"""Python access to the open-set active learning core."""

from ._osal import (
    ConfigError,
    ContractError,
    DegenerateStatsError,
    Error,
    FitError,
    NumericsError,
    accuracy_csv,
    fit_weibull,
    kl_term,
    load_config as _load_config,
    run_experiment,
    weibull_cdf,
)

import json as _json


def load_config(path, overrides=()):
    """Validated config as a dict. Overrides are dotted KEY=VALUE strings."""
    return _json.loads(_load_config(str(path), list(overrides)))


def final_accuracy(run):
    """Accuracy at the last stage of a run returned by run_experiment."""
    return run["stages"][-1]["accuracy"]


__all__ = [
    "ConfigError",
    "ContractError",
    "DegenerateStatsError",
    "Error",
    "FitError",
    "NumericsError",
    "accuracy_csv",
    "final_accuracy",
    "fit_weibull",
    "kl_term",
    "load_config",
    "run_experiment",
    "weibull_cdf",
]
