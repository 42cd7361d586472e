"""Federated-learning data-injection attack and detection simulator.

Thin bindings over the C++ core: the detector/aggregation primitives on numpy
arrays, plus a config-in, arrays-out experiment driver. The `fedsim` CLI and
the CSV/JSON result formats are provided by the C++ build.
"""

from ._core import (
    Config,
    ConfigError,
    InputError,
    IoError,
    ParseError,
    ProtocolError,
    RunResult,
    __version__,
    aggregate,
    coordinatewise_median,
    default_flip_table,
    load_idx,
    majority_trust,
    mixing_weight,
    nearest_rank_quantile,
    round_statistic,
    run,
    threshold_decision,
    write_results,
)

__all__ = [
    "Config",
    "ConfigError",
    "InputError",
    "IoError",
    "ParseError",
    "ProtocolError",
    "RunResult",
    "__version__",
    "aggregate",
    "coordinatewise_median",
    "default_flip_table",
    "load_idx",
    "majority_trust",
    "mixing_weight",
    "nearest_rank_quantile",
    "round_statistic",
    "run",
    "threshold_decision",
    "write_results",
]
