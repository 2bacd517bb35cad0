"""Run configuration: paper-default hyperparameters, flat key=value config
files, and command-line overrides (a flag always wins over the file)."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions shared by the encoder and decoder."""

    latent_dim: int = 100
    hidden_dim: int = 100
    mp_steps: int = 12
    mlp_hidden: int = 250

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"{f.name} must be positive")

    @property
    def node_dim(self) -> int:
        # decoder node state is [latent point, type embedding]
        return self.latent_dim + self.hidden_dim


@dataclass
class RunConfig:
    vocab: str = ""
    train_data: str = ""
    test_data: str = ""
    latent_dim: int = 100
    hidden_dim: int = 100
    mp_steps: int = 12
    mlp_hidden: int = 250
    lambda_latent: float = 0.3
    lambda_opt: float = 10.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    encodings: int = 20
    recon_cap: int = 5000
    gen_samples: int = 20000

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            latent_dim=self.latent_dim,
            hidden_dim=self.hidden_dim,
            mp_steps=self.mp_steps,
            mlp_hidden=self.mlp_hidden,
        )

    def validate(self, require_files: tuple[str, ...] = ()) -> None:
        positive_ints = (
            "latent_dim", "hidden_dim", "mp_steps", "mlp_hidden",
            "batch_size", "encodings", "recon_cap", "gen_samples",
        )
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("lambda_latent", "lambda_opt", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("Adam betas must lie in [0, 1)")
        for name in require_files:
            path = getattr(self, name)
            if not path:
                raise ConfigError(f"missing required path: {name}")
            if not os.path.exists(path):
                raise ConfigError(f"{name} file does not exist: {path}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def build_run_config(
    config_file: Optional[str] = None,
    overrides: Optional[dict[str, object]] = None,
) -> RunConfig:
    """Assemble defaults <- config file <- explicit overrides."""
    cfg = RunConfig()
    sources: dict[str, object] = {}
    if config_file is not None:
        sources.update(parse_config_file(config_file))
    if overrides:
        sources.update({k: v for k, v in overrides.items() if v is not None})
    for key, value in sources.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                value = str(value).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            else:
                value = str(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
        setattr(cfg, key, value)
    return cfg
