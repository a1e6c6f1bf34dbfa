"""Bindings for the pathm3 C++ core."""

import json

from ._core import (
    Error,
    bench,
    bleu4,
    config_keys,
    exact_attention,
    grad_check,
    loglog_slope,
    mean_bleu4,
    nystrom_attention,
    pinv,
    preset_names,
    read_features,
    run_cli,
    write_features,
)
from . import _core


def config(preset="desk", **overrides):
    """Resolved configuration as a dict. Overrides use the CLI key names."""
    pairs = [(k, _flag(v)) for k, v in overrides.items()]
    return json.loads(_core.config_json(preset, pairs))


def _flag(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


__all__ = [
    "Error",
    "bench",
    "bleu4",
    "config",
    "config_keys",
    "exact_attention",
    "grad_check",
    "loglog_slope",
    "mean_bleu4",
    "nystrom_attention",
    "pinv",
    "preset_names",
    "read_features",
    "run_cli",
    "write_features",
]
