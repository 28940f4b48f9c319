"""Run configuration: every threshold in one JSON document.

The default file path can be set with the ``SOHCAST_CONFIG`` environment
variable; command-line ``--config`` takes precedence. A file only needs the
keys it overrides, e.g. ``{"pulse": {"min_minutes": 6}, "seed": 3}``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .derive import CapacityConfig, PulseConfig
from .errors import BadConfig
from .ingest import CleaningConfig

ENV_VAR = "SOHCAST_CONFIG"


@dataclass(frozen=True)
class ModelConfig:
    split: float = 0.66
    arima_order: str = "0,1,1"
    bag_trees: int = 100
    features: str = "two"
    standardize: bool = True
    kfold: int = 5
    max_depth: int | None = None
    min_leaf: int = 1


@dataclass(frozen=True)
class FleetTestConfig:
    reference: str | None = None  # first serial when unset
    alpha: float = 0.05
    min_months: int = 32


@dataclass(frozen=True)
class RunConfig:
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    capacity: CapacityConfig = field(default_factory=CapacityConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fleet: FleetTestConfig = field(default_factory=FleetTestConfig)
    nominal_pack_energy_wh: float = 40000.0
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _merge(cls, base, overrides: dict, where: str):
    if not isinstance(overrides, dict):
        raise BadConfig(f"{where or 'config'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise BadConfig(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    changes = {}
    for key, value in overrides.items():
        current = getattr(base, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _merge(type(current), current, value, f"{where}.{key}".lstrip("."))
        else:
            changes[key] = value
    try:
        return dataclasses.replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise BadConfig(str(exc)) from exc


def config_from_dict(doc: dict) -> RunConfig:
    return _merge(RunConfig, RunConfig(), doc, "")


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    """Read a config file; falls back to ``$SOHCAST_CONFIG``, then built-in defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return RunConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)
