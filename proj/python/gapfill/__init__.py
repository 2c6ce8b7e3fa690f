"""Gap filling of gappy satellite time series: synthetic data, DInEOF and metrics."""

import json as _json

from ._gapfill import (
    ConfigError,
    Field,
    FormatError,
    NumericalError,
    dineof,
    mre,
    rmsle,
    run,
)
from ._gapfill import generate_synthetic as _generate_synthetic

__all__ = [
    "ConfigError",
    "Field",
    "FormatError",
    "NumericalError",
    "dineof",
    "generate_synthetic",
    "mre",
    "rmsle",
    "run",
]


def generate_synthetic(config=None, seed=42):
    """Return a (truth, gappy) pair of Fields; `config` is a dict or a JSON string."""
    if config is None:
        config = {}
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _generate_synthetic(config, seed)
