"""Run configuration: defaults < JSON config file < command-line flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

from .errors import ConfigError
from .ingest import CHANNELS
from .sticky import EMISSION_MODES

SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    # sampler
    alpha: float = 1.0
    gamma: float = 1.0
    kappa: float = 10.0
    truncation: int = 20
    niw_scale0: float = 0.01
    niw_dof0: float | None = None
    psi_fraction: float = 0.75
    iterations: int = 300
    burn_in: int = 150
    chains: int = 1
    emission_mode: str = "full"
    standardize: bool = False
    # ranking
    deadband: float = 0.05
    stop_threshold: float = 0.5
    # ingest / mapping
    rate_hz: float = 10.0
    derive_accel: bool = False
    oxts_columns: dict = field(default_factory=dict)
    frame_offset: int = 0
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed <= SEED_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError(f"need iterations > burn_in >= 0, got iterations={self.iterations}, "
                              f"burn_in={self.burn_in}")
        if self.deadband < 0 or self.stop_threshold < 0:
            raise ConfigError("ranking thresholds must be >= 0")
        if self.chains < 1:
            raise ConfigError(f"chains must be >= 1, got {self.chains}")
        if self.emission_mode not in EMISSION_MODES:
            raise ConfigError(f"emission_mode must be one of {EMISSION_MODES}, got {self.emission_mode!r}")
        if not self.rate_hz > 0:
            raise ConfigError(f"rate_hz must be > 0, got {self.rate_hz}")
        bad = set(self.oxts_columns) - set(CHANNELS)
        if bad:
            raise ConfigError(f"unknown oxts column overrides {sorted(bad)}")

    @classmethod
    def from_sources(cls, file_values: Mapping[str, Any] | None = None,
                     overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        merged: dict[str, Any] = {}
        for source in (file_values or {}, overrides or {}):
            unknown = set(source) - known
            if unknown:
                raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
            merged.update({k: v for k, v in source.items() if v is not None})
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a flat JSON object")
    return values
