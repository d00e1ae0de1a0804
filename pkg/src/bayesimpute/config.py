"""Flat key = value run configuration.

One registry drives the config-file parser, the CLI flags, and the snapshot
echoed into every output directory. Precedence: built-in defaults < config
file < CLI flags. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{raw}'")


@dataclass(frozen=True)
class RunConfig:
    # master seed for every derived RNG stream
    seed: int = 0
    # synthetic data generation
    n: int = 200
    t: int = 24
    m: int = 5
    missing_rate: float = 0.4
    label_noise: float = 0.5
    latent_dim: int = 3
    # model
    hidden_size: int = 16
    imputation_hidden_size: int = 0  # 0 means "same as hidden_size"
    cell: str = "tanh"
    deterministic: bool = False
    # training
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_imp: float = 1.0
    lambda_pred: float = 1.0
    mc_train_samples: int = 1
    prior_pi: float = 0.5
    prior_sigma1: float = 1.0
    prior_sigma2: float = float(np.exp(-6.0))
    prediction_nll_count: int = 1
    grad_clip: float = 5.0
    # evaluation pipeline
    test_fraction: float = 0.2
    mar_rate: float = 0.1
    mc_samples: int = 100
    figures: bool = True

    def replaced(self, **updates) -> "RunConfig":
        merged = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in updates.items():
            if key not in merged:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = value
        return RunConfig(**merged)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_PARSERS = {"int": int, "float": float, "str": str, "bool": _parse_bool}


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment; blank lines ignored."""
    path = Path(path)
    values = {}
    for ln, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, _, raw_value = line.partition("=")
        key, raw_value = key.strip(), raw_value.strip()
        if key not in _TYPES:
            raise ConfigError(f"{path}:{ln}: unknown config key '{key}'")
        try:
            values[key] = _PARSERS[_TYPES[key]](raw_value)
        except ValueError as e:
            raise ConfigError(f"{path}:{ln}: bad value for '{key}': {e}") from None
    return values


def resolve(config_path: Optional[str], cli_values: dict) -> RunConfig:
    """defaults < config file < explicitly-passed CLI values."""
    cfg = RunConfig()
    if config_path is not None:
        cfg = cfg.replaced(**parse_config_file(config_path))
    overrides = {k: v for k, v in cli_values.items() if v is not None}
    return cfg.replaced(**overrides)


def write_snapshot(cfg: RunConfig, path) -> None:
    """Echo the fully-resolved configuration as canonical key = value lines."""
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
