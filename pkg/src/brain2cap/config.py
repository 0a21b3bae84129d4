"""Experiment configuration (TOML) with the reference defaults.

Keys are kebab-case. Unknown sections or keys raise :class:`ConfigError`.
"""

import copy

import tomli

from .errors import Brain2CapError


class ConfigError(Brain2CapError, ValueError):
    pass


_SGD_NET = {
    "training-epochs": 1000,
    "learning-rate": 0.01,
    "gradient-clipping-threshold": 1.0,
    "l2-norm": 0.005,
    "activation": "relu",
    "initial-parameters": "scaled",
    "standardize": True,
    "batch-size": 32,
}

DEFAULTS = {
    "seed": 0,
    "lm": {
        "training-epochs": 100,
        "a": 0.001,
        "b1": 0.9,
        "b2": 0.999,
        "eps": 1e-8,
        "gradient-clipping-threshold": 1.0,
        "l2-norm": 0.005,
        "units-per-layer": 512,
        "vocabulary-min-count": 50,
        "initial-parameters": "scaled",
        "word-embedding": "",
        "batch-size": 32,
    },
    "ridge": {
        "l2-norm": 0.5,
        "standardize": False,
    },
    "mlp3": {**_SGD_NET, "units-per-layer": [8000]},
    "dnn5": {**_SGD_NET, "units-per-layer": [7500, 6500, 5500]},
    "ae": {**_SGD_NET, "training-epochs": 200},
}


def _merge(defaults, given, where):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {where}{key!r}")
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key!r} must be a table")
            out[key] = _merge(default, value, f"{where}{key}.")
            continue
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, (int, float)):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if ok and isinstance(default, int) and not isinstance(default, bool):
                ok = isinstance(value, int) or float(value).is_integer()
                value = int(value) if ok else value
        elif isinstance(default, list):
            ok = isinstance(value, list) and all(isinstance(v, int) for v in value)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            raise ConfigError(f"config key {where}{key!r} has invalid value {value!r}")
        out[key] = value
    return out


def load_config(path=None):
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return _merge(DEFAULTS, raw, "")


def parse_config(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None
    return _merge(DEFAULTS, raw, "")
