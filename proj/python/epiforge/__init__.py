"""Epidemic simulation, forecasting and evaluation toolkit."""

from ._epiforge import (
    ConfigError,
    DimensionError,
    __version__,
    balance_flow,
    compute_metrics,
    config_json,
    configure_logging,
    count_cleirnet_parameters,
    count_tdefsi_parameters,
    estimate_mi,
    naive_no_change,
    normalize_scores,
    run,
    select_counties,
    sha256_hex,
    simulate,
    subcommands,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "__version__",
    "balance_flow",
    "compute_metrics",
    "config_json",
    "configure_logging",
    "count_cleirnet_parameters",
    "count_tdefsi_parameters",
    "estimate_mi",
    "naive_no_change",
    "normalize_scores",
    "run",
    "select_counties",
    "sha256_hex",
    "simulate",
    "subcommands",
]
