"""Flat ``key = value`` run configuration and reproduction presets.

Lines look like ``lambda1 = 5`` or ``encoder_dims = 784, 400, 200``; ``#``
starts a comment. Float values may be written as fractions (``drop = 99/100``).
Precedence, lowest first: built-in defaults, preset, explicit keys.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .data import SplitSpec
from .driver import TrainConfig
from .errors import ConfigError

TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}

RUN_KEYS = {
    "preset": "str",
    "dataset": "str",
    "format": "str",
    "synthetic_count": "int",
    "synthetic_side": "int",
    "synthetic_seed": "int",
    "n_train": "int",
    "n_test": "int",
    "n_val": "int",
    "split_seed": "int",
    "encoder_dims": "ints",
    "output_dir": "str",
    "deterministic": "bool",
}

FORMATS = ("idx", "rawmat", "synthetic")

# Table-1 sizes and dims with the per-dataset hyperparameters of the experiments.
PRESETS = {
    "curves": {
        "lambda1": "5", "drop": "99/100", "gamma1": "0.7", "maxiter1": "200",
        "atol": "1e-8", "ftol": "1e-7", "theta": "0.5", "m0": "20",
        "n1": "250", "n_max": "2500",
        "encoder_dims": "784, 400, 200, 100, 50, 25, 6",
        "n_train": "20000", "n_test": "8000", "n_val": "2000",
    },
    "mnist": {
        "lambda1": "12", "drop": "49/50", "gamma1": "0.7", "maxiter1": "150",
        "atol": "1e-8", "ftol": "1e-5", "theta": "0.2", "m0": "10",
        "n1": "300", "n_max": "6000",
        "encoder_dims": "784, 1000, 500, 250, 30",
        "n_train": "50000", "n_test": "10000", "n_val": "10000",
    },
    "usps": {
        "lambda1": "7.5", "drop": "99/100", "gamma1": "0.65", "maxiter1": "150",
        "atol": "1e-6", "ftol": "2e-5", "theta": "0.2", "m0": "10",
        "n1": "200", "n_max": "2000",
        "encoder_dims": "256, 400, 200, 100, 50, 25",
        "n_train": "8000", "n_test": "2000", "n_val": "1000",
    },
    # desk-scale synthetic run: curves hyperparameters on 16x16 images
    "desk": {
        "dataset": "synthetic", "synthetic_count": "2000", "synthetic_side": "16",
        "lambda1": "5", "drop": "99/100", "gamma1": "0.7", "maxiter1": "100",
        "atol": "1e-8", "ftol": "1e-7", "theta": "0.5", "m0": "20",
        "n1": "100", "n_max": "800",
        "encoder_dims": "256, 64, 16, 8",
        "n_train": "1600", "n_test": "200", "n_val": "200",
        "max_hf_iters": "150",
    },
    "smoke": {
        "dataset": "synthetic", "synthetic_count": "400", "synthetic_side": "8",
        "lambda1": "5", "drop": "99/100", "maxiter1": "30", "m0": "10",
        "n1": "40", "n_max": "200",
        "encoder_dims": "64, 16, 4",
        "n_train": "300", "n_test": "50", "n_val": "50",
        "max_hf_iters": "10",
    },
}


@dataclass
class DataSource:
    path: Optional[str]
    format: str
    count: int = 2000
    side: int = 16
    seed: int = 0


@dataclass
class RunConfig:
    dataset: DataSource
    encoder_dims: list
    train: TrainConfig
    split: Optional[SplitSpec] = None
    output_dir: str = "shf_out"
    deterministic: bool = False
    preset: Optional[str] = None
    raw: dict = field(default_factory=dict)

    def layer_dims(self):
        enc = list(self.encoder_dims)
        return enc + enc[-2::-1]


def _convert(key: str, kind, text: str):
    text = text.strip()
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(Fraction(text)) if "/" in text else float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind == "ints":
            dims = [int(part) for part in text.replace("-", ",").split(",") if part.strip()]
            if len(dims) < 2 or min(dims) < 1:
                raise ValueError(text)
            return dims
        return text
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None


def _kind(key):
    if key in RUN_KEYS:
        return RUN_KEYS[key]
    return TRAIN_KEYS[key]


def parse_lines(lines, source: str = "<config>") -> dict:
    """Collect raw ``key -> (value_text, line_no)`` pairs, rejecting unknown keys."""
    entries = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {text!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        if key not in RUN_KEYS and key not in TRAIN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)
    return entries


def build_config(entries: dict, preset: Optional[str] = None, source: str = "<config>") -> RunConfig:
    preset = preset or (entries["preset"][0] if "preset" in entries else None)
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update({k: (v, None) for k, v in PRESETS[preset].items()})
    merged.update(entries)

    values = {}
    for key, (text, lineno) in merged.items():
        where = f"{source}:{lineno}: " if lineno else f"preset {preset}: "
        try:
            values[key] = _convert(key, _kind(key), text)
        except ConfigError as exc:
            raise ConfigError(where + str(exc)) from None

    for key in ("dataset", "encoder_dims"):
        if key not in values:
            raise ConfigError(f"{source}: missing required key {key!r}")

    path = values["dataset"]
    fmt = values.get("format")
    if fmt is None:
        if path == "synthetic":
            fmt = "synthetic"
        elif path.endswith(".rawmat"):
            fmt = "rawmat"
        else:
            fmt = "idx"
    if fmt not in FORMATS:
        raise ConfigError(f"{source}: format must be one of {FORMATS}, got {fmt!r}")
    source_spec = DataSource(
        path=None if fmt == "synthetic" else path,
        format=fmt,
        count=values.get("synthetic_count", 2000),
        side=values.get("synthetic_side", 16),
        seed=values.get("synthetic_seed", 0),
    )

    sizes = [values.get(k) for k in ("n_train", "n_test", "n_val")]
    if all(v is None for v in sizes):
        split_spec = None
    elif any(v is None for v in sizes):
        raise ConfigError(f"{source}: give all of n_train, n_test, n_val or none")
    else:
        split_spec = SplitSpec(*sizes, seed=values.get("split_seed", 0))

    train_kwargs = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    try:
        train_cfg = TrainConfig(**train_kwargs)
    except ConfigError as exc:
        lines = [merged[k][1] for k in train_kwargs if merged[k][1] and k in str(exc)]
        prefix = f"{source}:{lines[0]}: " if lines else f"{source}: "
        raise ConfigError(prefix + str(exc)) from None

    return RunConfig(
        dataset=source_spec,
        encoder_dims=values["encoder_dims"],
        train=train_cfg,
        split=split_spec,
        output_dir=values.get("output_dir", "shf_out"),
        deterministic=values.get("deterministic", False),
        preset=preset,
        raw={k: v for k, v in values.items()},
    )


def parse_config(path, preset: Optional[str] = None) -> RunConfig:
    """Read a configuration file; ``SHF_OUTPUT_DIR`` overrides ``output_dir``."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = build_config(parse_lines(lines, str(path)), preset=preset, source=str(path))
    env_dir = os.environ.get("SHF_OUTPUT_DIR")
    if env_dir:
        cfg.output_dir = env_dir
    return cfg
