"""Experiment configuration: a flat ``key = value`` text file.

Grammar: one ``key = value`` pair per line; blank lines and ``#`` comments
ignored.  Booleans are ``true``/``false``, integer tuples are comma-separated
(``pool_kernels = 8,4,1``).  Unknown keys and out-of-range values fail with a
field-level message.  The documented key set is the field list of
:class:`ExperimentConfig`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .models import MODEL_KINDS

LOSS_KINDS = ("mse", "dilate")
TARGET_CHANNELS = ("hr", "mbp")


class ConfigError(ValueError):
    """Invalid configuration; `field` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    # data source: synthetic generator or CSV pair
    data: str = "synthetic"
    vitals_csv: str = ""
    diagnosis_csv: str = ""
    synthetic_patients: int = 200
    synthetic_seed: int = 7
    synthetic_deterioration: bool = True
    synthetic_noise_std: float = 1.5
    # experiment axes
    model: str = "nhits"
    target: str = "mbp"
    covariates: bool = False
    loss: str = "mse"
    alpha: float = 0.5
    gamma: float = 0.01
    # training schedule
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 42
    # N-BEATS / N-HiTS hyperparameters
    n_stacks: int = 3
    blocks_per_stack: int = 1
    hidden_width: int = 256
    theta_dim: int = 32
    pool_kernels: tuple = (8, 4, 1)
    coarse_lens: tuple = (6, 12, 36)
    # TFT hyperparameters
    tft_hidden: int = 64
    tft_heads: int = 4
    tft_dropout: float = 0.1


_BOOL_VALUES = {"true": True, "false": False}


def _convert(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in _BOOL_VALUES:
                raise ValueError("expected true or false")
            return _BOOL_VALUES[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(name, f"cannot parse {raw!r}: {exc}") from None


def parse_config_text(text: str, defaults: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = defaults or ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    py_types = {f.name: type(getattr(cfg, f.name)) for f in fields(ExperimentConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError("<line>", f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(key, f"unknown key (line {lineno})")
        updates[key] = _convert(key, py_types[key], raw)
    return replace(cfg, **updates)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    cfg = parse_config_text(text)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.data not in ("synthetic", "csv"):
        raise ConfigError("data", f"must be 'synthetic' or 'csv', got {cfg.data!r}")
    if cfg.data == "csv":
        for name in ("vitals_csv", "diagnosis_csv"):
            path = getattr(cfg, name)
            if not path:
                raise ConfigError(name, "required when data = csv")
            if not os.path.exists(path):
                raise ConfigError(name, f"file does not exist: {path}")
    if cfg.model not in MODEL_KINDS:
        raise ConfigError("model", f"must be one of {MODEL_KINDS}, got {cfg.model!r}")
    if cfg.target not in TARGET_CHANNELS:
        raise ConfigError("target", f"must be one of {TARGET_CHANNELS}, got {cfg.target!r}")
    if cfg.loss not in LOSS_KINDS:
        raise ConfigError("loss", f"must be one of {LOSS_KINDS}, got {cfg.loss!r}")
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError("alpha", f"must lie in [0, 1], got {cfg.alpha}")
    if cfg.gamma <= 0.0:
        raise ConfigError("gamma", f"must be positive, got {cfg.gamma}")
    if cfg.lr <= 0.0:
        raise ConfigError("lr", f"must be positive, got {cfg.lr}")
    for name in ("batch_size", "max_epochs", "patience", "synthetic_patients",
                 "n_stacks", "blocks_per_stack", "hidden_width", "theta_dim",
                 "tft_hidden", "tft_heads"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, f"must be >= 1, got {getattr(cfg, name)}")
    if not 0.0 <= cfg.tft_dropout < 1.0:
        raise ConfigError("tft_dropout", f"must lie in [0, 1), got {cfg.tft_dropout}")
    if cfg.synthetic_noise_std < 0.0:
        raise ConfigError("synthetic_noise_std", "must be non-negative")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(doc: dict) -> ExperimentConfig:
    kwargs = {}
    for f in fields(ExperimentConfig):
        if f.name in doc:
            value = doc[f.name]
            kwargs[f.name] = tuple(value) if isinstance(value, list) else value
    return ExperimentConfig(**kwargs)


MODEL_FIELDS = (
    "model", "target", "covariates",
    "n_stacks", "blocks_per_stack", "hidden_width", "theta_dim",
    "pool_kernels", "coarse_lens", "tft_hidden", "tft_heads", "tft_dropout",
)


def model_fingerprint(cfg: ExperimentConfig) -> dict:
    """The config subset that must match between a checkpoint and the
    experiment it is evaluated under."""
    doc = config_to_dict(cfg)
    return {name: doc[name] for name in MODEL_FIELDS}
