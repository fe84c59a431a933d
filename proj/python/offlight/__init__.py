"""Offline multi-agent traffic signal control.

Thin Python layer over the C++ core. Structured values (network specs,
weight configs, pipeline configs, reports) are plain dicts.
"""

import json as _json
from os import PathLike as _PathLike

from . import _core
from ._core import (
    ArgumentError,
    ConfigError,
    DegenerateBatchError,
    DivergenceError,
    Error,
    IncompatibleError,
    ParseError,
    PreconditionError,
    ShapeError,
    StageError,
    LookupError,
    ActionError,
    NumericError,
    VersionError,
    fnv1a,
    is_weight_mean,
    is_weight_product,
)

__all__ = [
    "Simulator", "Policy", "scenario_spec", "default_config", "config_hash",
    "is_weight_mean", "is_weight_product", "rbps_weight", "rbps_distribution", "combine_weights",
    "evaluate_controller", "evaluate_checkpoint", "generate_dataset", "run_pipeline",
    "scaling_benchmark", "fnv1a",
    "Error", "ConfigError", "ArgumentError", "ShapeError", "IncompatibleError", "PreconditionError",
    "ParseError", "VersionError", "DegenerateBatchError", "DivergenceError", "StageError", "LookupError", "ActionError", "NumericError",
]


def _dump(d):
    return "" if d is None else _json.dumps(d)


def scenario_spec(scenario="toy-2x2", demand="medium"):
    return _json.loads(_core.scenario_spec(scenario, demand))


class Simulator(_core.Simulator):
    """Grid simulator. Observations are (agents, features) arrays."""

    def __init__(self, spec=None):
        super().__init__(_dump(spec if spec is not None else scenario_spec()))


Policy = _core.Policy


def rbps_weight(g, g_min, g_max, config=None, c=1.0):
    return _core.rbps_weight(g, g_min, g_max, _dump(config), c)


def rbps_distribution(returns, config=None):
    return _core.rbps_distribution(list(returns), _dump(config))


def combine_weights(w_is, w_rbps, config=None):
    return _json.loads(_core.combine_weights(list(w_is), list(w_rbps), _dump(config)))


def evaluate_controller(kind, spec=None, episodes=10, seeds=(0, 1, 2)):
    spec = spec if spec is not None else scenario_spec()
    return _json.loads(_core.evaluate_controller(kind, _dump(spec), episodes, list(seeds)))


def evaluate_checkpoint(path, spec=None, episodes=10, seeds=(0, 1, 2)):
    spec = spec if spec is not None else scenario_spec()
    return _json.loads(_core.evaluate_checkpoint(str(path), _dump(spec), episodes, list(seeds)))


def default_config():
    return _json.loads(_core.default_config())


def config_hash(config):
    return _core.config_hash(_dump(config))


def generate_dataset(config, out):
    return _core.generate_dataset(_dump(config), str(out))


def run_pipeline(config, out_dir, force=False):
    """Runs every stage; returns [(stage, ran)]."""
    return _core.run_pipeline(_dump(config), str(out_dir), force)


def scaling_benchmark(grids=((2, 2), (3, 3), (4, 4), (6, 6)), episodes=3):
    return _json.loads(_core.scaling_benchmark([tuple(g) for g in grids], episodes))
