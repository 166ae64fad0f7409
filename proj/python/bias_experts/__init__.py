"""Bias experts: one-vs-rest bias models and product-of-experts debiasing."""

import json as _json

from ._core import (
    BexpError,
    BinaryView,
    ConfigError,
    Dataset,
    DatasetBundle,
    DegenerateClassError,
    DistributionError,
    LabelError,
    NumericError,
    ShapeError,
    SyntheticSpec,
    amplification_weight,
    balance_weights,
    generate,
    main_loss,
    merge_logits,
    poe_loss,
    sigmoid_bce,
    softmax_ce,
    split_ovr,
)
from . import _core

__version__ = "0.1.0"


def default_config():
    return _json.loads(_core.default_config_json())


def resolve_config(config=None, **flags):
    """Layer a config dict and flag-style overrides over the preset defaults.

    Overrides use the JSON layout, e.g. resolve_config(train={"alpha": 0.0}).
    """
    file_json = _json.dumps(config) if config is not None else ""
    return _json.loads(_core.resolve_config_json(file_json, _json.dumps(flags)))


def run(config=None, seed=None, arm="full"):
    """Run one pipeline and return the report dict."""
    cfg = resolve_config(config)
    if seed is None:
        seed = cfg["seed"]
    return _json.loads(_core.run_json(_json.dumps(cfg), seed, arm))


def command(name, config=None, t_values=()):
    """Run a CLI command ("run", "ablate", "sweep-t", "gen-data"); returns (exit_code, log)."""
    cfg = resolve_config(config)
    return _core.command(name, _json.dumps(cfg), list(t_values))


__all__ = [
    "BexpError",
    "BinaryView",
    "ConfigError",
    "Dataset",
    "DatasetBundle",
    "DegenerateClassError",
    "DistributionError",
    "LabelError",
    "NumericError",
    "ShapeError",
    "SyntheticSpec",
    "amplification_weight",
    "balance_weights",
    "command",
    "default_config",
    "generate",
    "main_loss",
    "merge_logits",
    "poe_loss",
    "resolve_config",
    "run",
    "sigmoid_bce",
    "softmax_ce",
    "split_ovr",
]
