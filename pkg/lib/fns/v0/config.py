# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Shared configuration and error handling for the FNS elasticity libraries.

This library owns three things used by every other `fns` library and by the command line:

- `Error`, the base class of every exception raised by the libraries;
- `DEFAULTS`, the table of command line options with their description, type and default;
- `load_config_file`, which reads a configuration file given with `--config`.

You can use this library as follows:

```python
from fns.v0.config import DEFAULTS, load_config_file, resolve_options

# Read a config file (YAML or plain `key = value` text)
file_options = load_config_file("bench.conf")

# Merge defaults, file options and explicit flags (explicit flags win)
options = resolve_options("bench", file_options, {"tol": 1e-8})
```
"""

import configparser
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 5


class Error(Exception):
    """Base class of most errors raised by the fns libraries."""

    def __repr__(self):
        """Represent the Error class."""
        return "<{}.{} {}>".format(type(self).__module__, type(self).__name__, self.args)

    @property
    def name(self):
        """Return a string representation of the module plus class."""
        return "<{}.{}>".format(type(self).__module__, type(self).__name__)

    @property
    def message(self):
        """Return the message passed as an argument."""
        return self.args[0]


class ConfigError(Error):
    """Raised when a configuration value or file is invalid."""


# Command line options. Every entry documents one flag; "commands" lists the subcommands that
# accept it. Types are the Python callables used to coerce values read from config files.
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "seed": {
        "description": "Seed for every random stream of the command.",
        "type": int,
        "default": 0,
        "commands": ["gen-mesh", "gen-data", "train", "bench"],
    },
    "family": {
        "description": "Dataset family: Data1, Data2, Data3 or Data4.",
        "type": str,
        "default": "Data1",
        "commands": ["gen-data"],
    },
    "samples": {
        "description": "Number of samples M to generate.",
        "type": int,
        "default": 200,
        "commands": ["gen-data"],
    },
    "mesh": {
        "description": "Mesh kind for 2D families: structured or unstructured.",
        "type": str,
        "default": "structured",
        "commands": ["gen-mesh", "gen-data"],
    },
    "resolution": {
        "description": "Cells per unit edge of the mesh (the 3D box has 2r x r x r cells).",
        "type": int,
        "default": 8,
        "commands": ["gen-mesh", "gen-data"],
    },
    "test-fraction": {
        "description": "Fraction of the samples held out for testing.",
        "type": float,
        "default": 0.05,
        "commands": ["gen-data"],
    },
    "variant": {
        "description": "Hybrid solver variant: gfns, agfns or mlagfns.",
        "type": str,
        "default": "agfns",
        "commands": ["train", "solve"],
    },
    "modes": {
        "description": "Comma separated frequency bandwidths m_1 > m_2 > ... of the levels.",
        "type": str,
        "default": "4",
        "commands": ["train"],
    },
    "sweeps": {
        "description": "Weighted block Jacobi sweeps per smoothing application.",
        "type": int,
        "default": 10,
        "commands": ["train"],
    },
    "omega": {
        "description": "Relaxation factor of the weighted block Jacobi smoother.",
        "type": float,
        "default": 2.0 / 3.0,
        "commands": ["train", "lfa"],
    },
    "width": {
        "description": "Base hidden width d1 of the meta networks.",
        "type": int,
        "default": 16,
        "commands": ["train"],
    },
    "k": {
        "description": "Unrolled hybrid iterations K in the training loss.",
        "type": int,
        "default": 5,
        "commands": ["train"],
    },
    "batch": {
        "description": "Batch size N_b.",
        "type": int,
        "default": 64,
        "commands": ["train"],
    },
    "epochs": {
        "description": "Training epochs.",
        "type": int,
        "default": 200,
        "commands": ["train"],
    },
    "lr": {
        "description": "Adam learning rate.",
        "type": float,
        "default": 1e-4,
        "commands": ["train"],
    },
    "tol": {
        "description": "Relative residual target.",
        "type": float,
        "default": 1e-6,
        "commands": ["solve", "bench"],
    },
    "max-iters": {
        "description": "Iteration cap (200 in 2D and 1000 in 3D by convention).",
        "type": int,
        "default": 200,
        "commands": ["solve", "bench"],
    },
    "precond": {
        "description": "Use the hybrid cycle stand-alone (none) or inside FGMRES (fgmres).",
        "type": str,
        "default": "none",
        "commands": ["solve"],
    },
    "nu": {
        "description": "Poisson ratio for local Fourier analysis.",
        "type": float,
        "default": 0.3,
        "commands": ["lfa"],
    },
    "grid": {
        "description": "Frequency samples per axis of the local Fourier analysis.",
        "type": int,
        "default": 64,
        "commands": ["lfa"],
    },
    "shape": {
        "description": "Mesh domain: square ([0, 1]^2) or box ([0, 3] x [0, 1]^2).",
        "type": str,
        "default": "square",
        "commands": ["gen-mesh"],
    },
    "scale": {
        "description": "Preset size of the correction levels: desk or full.",
        "type": str,
        "default": "desk",
        "commands": ["train"],
    },
    "dataset": {
        "description": "Dataset directory written by gen-data.",
        "type": str,
        "default": None,
        "commands": ["train", "solve", "bench", "spectrum"],
    },
    "sample": {
        "description": "Index of the dataset sample.",
        "type": int,
        "default": None,
        "commands": ["solve", "spectrum", "plot"],
    },
    "resume": {
        "description": "Checkpoint whose weights and optimizer state training continues from.",
        "type": str,
        "default": None,
        "commands": ["train"],
    },
    "weights": {
        "description": "Checkpoint of a trained correction model.",
        "type": str,
        "default": None,
        "commands": ["solve", "bench", "spectrum"],
    },
    "methods": {
        "description": "Comma separated benchmark methods.",
        "type": str,
        "default": (
            "hybrid-solver,hybrid-precond-fgmres,jacobi-solver,"
            "jacobi-precond-fgmres,unpreconditioned-fgmres"
        ),
        "commands": ["bench"],
    },
    "iterations": {
        "description": "Comma separated iterations whose error spectra are recorded.",
        "type": str,
        "default": "1,5",
        "commands": ["spectrum"],
    },
    "coordinates": {
        "description": "Coordinates of the spectrum transform: learned or identity.",
        "type": str,
        "default": "learned",
        "commands": ["spectrum"],
    },
    "systems": {
        "description": "Also export the assembled matrix and right-hand side of every sample.",
        "type": bool,
        "default": False,
        "commands": ["gen-data"],
    },
    "reference": {
        "description": "Compute a direct reference solution and report the contraction.",
        "type": bool,
        "default": False,
        "commands": ["solve"],
    },
    "out": {
        "description": "Output file, directory or file prefix of the command.",
        "type": str,
        "default": None,
        "commands": ["gen-mesh", "gen-data", "train", "bench", "lfa", "spectrum", "plot"],
    },
    "log": {
        "description": "CSV file receiving the per-epoch training loss.",
        "type": str,
        "default": None,
        "commands": ["train"],
    },
    "report": {
        "description": "JSON file receiving the solve report.",
        "type": str,
        "default": None,
        "commands": ["solve"],
    },
    "svg": {
        "description": "SVG file receiving the spectral radius heat map.",
        "type": str,
        "default": None,
        "commands": ["lfa"],
    },
    "residuals": {
        "description": "Residual history CSV written by bench.",
        "type": str,
        "default": None,
        "commands": ["plot"],
    },
}

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _coerce(key: str, value: Any) -> Any:
    option = DEFAULTS.get(key)
    if option is None:
        raise ConfigError(f"unknown option '{key}'")
    convert = _boolean if option["type"] is bool else option["type"]
    try:
        return convert(value)
    except (TypeError, ValueError) as e:
        expected = option["type"].__name__
        raise ConfigError(f"option '{key}' expects {expected}, got {value!r}") from e


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a configuration file into a dictionary keyed by option name.

    YAML files (`.yaml`, `.yml`) are read with PyYAML; anything else is read as plain
    `key = value` lines. Option names may use `-` or `_`.

    Args:
        path: location of the configuration file.

    Returns:
        a dictionary mapping option names (with `-`) to coerced values.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e

    if path.suffix in (".yaml", ".yml"):
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
    else:
        parser = configparser.ConfigParser(delimiters=("=",), interpolation=None)
        try:
            parser.read_string("[options]\n" + text, source=str(path))
        except configparser.Error as e:
            raise ConfigError(f"malformed config file {path}: {e}") from e
        raw = dict(parser["options"])

    options = {}
    for key, value in raw.items():
        name = str(key).strip().replace("_", "-")
        options[name] = _coerce(name, value)
    logger.debug("read %d options from %s", len(options), path)
    return options


def resolve_options(
    command: str,
    file_options: Optional[Dict[str, Any]] = None,
    explicit: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Merge defaults, config file values and explicit flags for one subcommand.

    Args:
        command: name of the subcommand, used to select the applicable defaults.
        file_options: values read by `load_config_file`.
        explicit: values given on the command line; `None` values are ignored.

    Returns:
        a dictionary with one entry per option accepted by `command`.
    """
    options = {
        key: option["default"] for key, option in DEFAULTS.items() if command in option["commands"]
    }
    for key, value in (file_options or {}).items():
        if key in options:
            options[key] = value
    for key, value in (explicit or {}).items():
        if value is not None:
            options[key.replace("_", "-")] = value
    return options


def parse_modes(modes: Union[str, int]) -> list:
    """Parse a comma separated list of frequency bandwidths, e.g. '4,3,2'."""
    try:
        values = [int(m) for m in str(modes).split(",") if m.strip()]
    except ValueError as e:
        raise ConfigError(f"invalid frequency bandwidths {modes!r}") from e
    if not values:
        raise ConfigError("at least one frequency bandwidth is required")
    return values
