"""Variational information-based interaction-grounded learning."""

from ._vigl import (
    ConfigError,
    ContractError,
    ExperimentConfig,
    FormatError,
    ShapeError,
    collect_synthetic,
    conjugate,
    exact_cmi,
    exact_mi,
    oracle_check,
    trial_seed,
    variational_bound,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "ExperimentConfig",
    "FormatError",
    "ShapeError",
    "collect_synthetic",
    "conjugate",
    "exact_cmi",
    "exact_mi",
    "oracle_check",
    "trial_seed",
    "variational_bound",
]
