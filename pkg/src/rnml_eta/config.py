"""Flat ``key = value`` configuration files.

Keys are dotted (``train.lr``, ``aux.margins``, ...).  Lines starting with
``#`` or ``;`` are comments.  Lists are comma separated.  Unknown keys are
rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import replace
from pathlib import Path

from .errors import ConfigurationError, InvalidArgumentError, MissingPrerequisiteError
from .trainer import TrainConfig

_SECTION = "config"


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.strip().strip("[]()").split(",") if x.strip())


# key -> (parser, help)
KEYS = {
    "model.variant": (str, "route-eta | wdr | wdr-nolink | rnml"),
    "model.hidden": (int, "LSTM / MLP width"),
    "train.batch_size": (int, "trips per step"),
    "train.lr": (float, "Adam learning rate"),
    "train.max_steps": (int, "step budget"),
    "train.seed": (int, "initialization and sampling seed"),
    "train.eval_every": (int, "steps between validation passes"),
    "train.patience": (int, "validation passes without improvement before stopping (0 disables)"),
    "train.clip_norm": (float, "global gradient-norm clip"),
    "train.speed": (str, "speed feature during training: observed | historical"),
    "aux.beta": (float, "auxiliary task weight"),
    "aux.margins": (_floats, "three hinge margins"),
    "aux.gammas": (_floats, "three hinge weights"),
    "aux.triangles_per_batch": (int, "triangles sampled per step"),
    "data.coverage_mode": (str, "trips | traversals"),
    "eval.deltas": (str, "coverage thresholds, e.g. 50:500:50"),
    "eval.distinct": (lambda s: s.strip().lower() in ("1", "true", "yes"), "count distinct links in the cold rule"),
}

_TRAIN_FIELDS = {
    "model.variant": "variant",
    "model.hidden": "hidden",
    "train.batch_size": "batch_size",
    "train.lr": "lr",
    "train.max_steps": "max_steps",
    "train.seed": "seed",
    "train.eval_every": "eval_every",
    "train.patience": "patience",
    "train.clip_norm": "clip_norm",
    "train.speed": "train_speed",
    "aux.beta": "beta",
}
_TRIANGLE_FIELDS = {"aux.margins": "margins", "aux.gammas": "gammas", "aux.triangles_per_batch": "triangles_per_batch"}


def parse_config(text: str, source: str = "<config>") -> dict:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n{text}", source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    out = {}
    for key, raw in cp[_SECTION].items():
        if key not in KEYS:
            raise ConfigurationError(f"{source}: unknown key {key!r}")
        try:
            out[key] = KEYS[key][0](raw)
        except ValueError as exc:
            raise ConfigurationError(f"{source}: bad value for {key}: {raw!r}") from exc
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingPrerequisiteError(f"config file {path} not found")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def train_config(values: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Overlay parsed config values on ``base`` (defaults when omitted)."""
    base = base or TrainConfig()
    try:
        tri = replace(base.triangle, **{f: values[k] for k, f in _TRIANGLE_FIELDS.items() if k in values})
        return replace(base, triangle=tri, **{f: values[k] for k, f in _TRAIN_FIELDS.items() if k in values})
    except InvalidArgumentError as exc:
        raise ConfigurationError(str(exc)) from exc
