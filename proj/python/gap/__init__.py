"""Generative assimilation and prediction on surrogate chaotic systems.

Thin wrapper over the native core: configs are plain dicts, manifests come
back as dicts, tensors as numpy arrays.
"""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    IoError,
    InvalidArgument,
    NumericalError,
    acc,
    command_names,
    crps,
    crps_field,
    gaussian_crps,
    ks_two_sample,
    lorenz96_run,
    num_threads,
    power_spectrum,
    read_tensor,
    rmse,
    set_num_threads,
    sha256_hex,
    spread_skill_ratio,
    write_tensor,
)

__version__ = _core.__version__


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config or {})


def materialize_config(config=None):
    """Return the config with every default filled in (strict: unknown keys raise)."""
    return _json.loads(_core.materialize_config(_text(config)))


def config_hash(config=None):
    return _core.config_hash(_text(config))


def run_command(name, config=None, out="", quiet=True, evaluate="forecast"):
    """Run one experiment command and return its manifest."""
    return _json.loads(_core.run_command(name, _text(config), str(out), quiet, evaluate))


def read_metrics(path):
    """Metric CSV as a list of dicts."""
    import csv

    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["lead"] = int(r["lead"])
        r["value"] = float(r["value"])
        r["member_count"] = int(r["member_count"])
        r["seed"] = int(r["seed"])
    return rows
