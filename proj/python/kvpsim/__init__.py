"""Python front end for the kvpsim simulator core."""

import json

from ._kvpsim import (
    ConfigError,
    amdahl_e2e,
    format_ratio,
    hardware_presets,
    model_presets,
    speedup,
)
from . import _kvpsim

__all__ = [
    "ConfigError",
    "amdahl_e2e",
    "capacity",
    "cli",
    "format_ratio",
    "hardware_presets",
    "model_presets",
    "run",
    "speedup",
]


def run(scenario=None, **overrides):
    """Simulate a scenario and return its metrics as a dict.

    `scenario` is a dict or JSON string; keyword overrides use
    section__key=value, e.g. workload__batch=4.
    """
    if scenario is None:
        scenario = {"model": {"preset": "llama2-7b"}}
    text = scenario if isinstance(scenario, str) else json.dumps(scenario)
    sets = [f"{k.replace('__', '.', 1)}={json.dumps(v)}" for k, v in overrides.items()]
    return json.loads(_kvpsim.simulate(text, sets))


def capacity(model, hardware="h20", batch=1):
    return json.loads(_kvpsim.capacity(model, hardware, batch))


def cli(*args):
    """Run a CLI command in-process; returns (exit_code, stdout, stderr)."""
    return _kvpsim.cli([str(a) for a in args])
