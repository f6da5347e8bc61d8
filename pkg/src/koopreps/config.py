"""Flat ``key = value`` run configuration.

Keys are ``section.name``; a ``[section]`` header prefixes the keys after it.
``#`` starts a comment. Every key has a typed default taken from the recipe
preset of the dataset (``yinyang`` or ``mnist``); unknown keys are rejected.

Example::

    [kae]
    lr = 0.01
    schedule = cosine
    kae.lambda_dist = 0
"""
from __future__ import annotations

import copy
from pathlib import Path

from .errors import ConfigError
from .kae import KaeLossWeights, KaeTrainConfig
from .resnet import MlpTrainConfig

_COMMON = {
    "mlp.batch_size": 512,
    "mlp.peak_lr": 0.1,
    "mlp.base_fraction": 1.0 / 25.0,
    "mlp.momentum": 0.9,
    "mlp.weight_decay": 5e-4,
    "mlp.seed": 0,
    "mlp.blocks": 4,
    "kae.weight_decay": 5e-4,
    "kae.lambda_recon": 1.0,
    "kae.lambda_linear": 1.0,
    "kae.lambda_state": 1.0,
    "kae.seed": 0,
    "kae.k_steps": 50,
    "kae.schedule": "constant",
    "kae.leaky_slope": 0.01,
    "kae.dtype": "float32",
    "preprocess.q": 0,
    "preprocess.normalize": "rms",
    "edit.subsample": 512,
    "edit.ridge": 1e-3,
    "edit.target_rule": "centroid",
    "edit.seed": 0,
    "topology.max_dim": 1,
    "topology.eps_max": 4.0,
    "topology.grid": 200,
    "topology.subsample": 300,
    "topology.method": "uniform",
    "topology.seed": 0,
}

PRESETS: dict[str, dict] = {
    "yinyang": {
        **_COMMON,
        "mlp.epochs": 500,
        "mlp.width": 10,
        "kae.batch_size": 1024,
        "kae.epochs": 1000,
        "kae.lr": 1e-1,
        "kae.lambda_dist": 1.0,
        "kae.hidden": 30,
        "kae.observable": 20,
    },
    "mnist": {
        **_COMMON,
        "mlp.epochs": 30,
        "mlp.batch_size": 128,
        "mlp.width": 784,
        "kae.batch_size": 512,
        "kae.epochs": 100,
        "kae.lr": 5e-3,
        "kae.lambda_dist": 1e-3,
        "kae.hidden": 1000,
        "kae.observable": 800,
        "topology.eps_max": 0.5,
    },
}

_CHOICES = {
    "kae.schedule": ("constant", "cosine", "cyclic"),
    "kae.dtype": ("float32", "float64"),
    "preprocess.normalize": ("rms", "frobenius"),
    "edit.target_rule": ("centroid", "nearest"),
    "topology.method": ("uniform", "maxmin"),
}


def preset_for(dataset_name: str | None) -> str:
    if dataset_name and dataset_name.startswith("mnist"):
        return "mnist"
    return "yinyang"


def _coerce(key: str, raw: str, default, line: int | None):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key} expects {type(default).__name__}, got {raw!r}", line) from None
    if key in _CHOICES and raw not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {_CHOICES[key]}, got {raw!r}", line)
    return raw


class Config(dict):
    """Fully-resolved key -> value mapping (defaults plus overrides)."""

    preset: str = "yinyang"

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.items() if k.startswith(prefix)}


def parse_config(text: str, preset: str = "yinyang") -> Config:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = Config(copy.deepcopy(PRESETS[preset]))
    cfg.preset = preset
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section and not any(k.startswith(section + ".") for k in cfg):
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key and section:
            key = f"{section}.{key}"
        if key not in cfg:
            raise ConfigError(f"unknown key {key!r}", lineno)
        cfg[key] = _coerce(key, value, PRESETS[preset][key], lineno)
    return cfg


def load_config(path, preset: str = "yinyang") -> Config:
    if path is None:
        return parse_config("", preset)
    return parse_config(Path(path).read_text(encoding="utf-8"), preset)


def override(cfg: Config, key: str, value) -> None:
    """Apply a CLI flag on top of the parsed file (``None`` means not given)."""
    if value is None:
        return
    if key not in cfg:
        raise ConfigError(f"unknown key {key!r}")
    cfg[key] = _coerce(key, str(value), PRESETS[cfg.preset][key], None)


def mlp_train_config(cfg: Config) -> MlpTrainConfig:
    s = cfg.section("mlp")
    return MlpTrainConfig(s["epochs"], s["batch_size"], s["peak_lr"], s["base_fraction"],
                          s["momentum"], s["weight_decay"], s["seed"])


def kae_train_config(cfg: Config) -> KaeTrainConfig:
    s = cfg.section("kae")
    weights = KaeLossWeights(s["lambda_recon"], s["lambda_linear"], s["lambda_state"],
                             s["lambda_dist"])
    return KaeTrainConfig(s["batch_size"], s["epochs"], s["lr"], s["weight_decay"], weights,
                          s["seed"], s["schedule"])
