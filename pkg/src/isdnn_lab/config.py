"""Run configuration: one JSON document, every key overridable from the command line."""

from __future__ import annotations

import dataclasses
import json
import typing
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ConfigError, StorageError


@dataclass
class SystemConfig:
    nt: int = 8
    nr: int = 64
    pilots: int = 8
    modulation: str = "16qam"


@dataclass
class GeometryConfig:
    type: str = "ula"
    spacing: float = 0.5
    axis: str = "x"
    counts: List[int] = field(default_factory=list)
    positions: Optional[List[List[float]]] = None


@dataclass
class ChannelConfig:
    model: str = "rayleigh"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)


@dataclass
class DatasetSection:
    train_size: int = 50000
    test_size: int = 10000
    snr_db: List[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    seed: int = 0
    fixed_pilots: bool = False
    train_path: str = "data/train.ceds"
    test_path: str = "data/test.ceds"


@dataclass
class NetworkSection:
    layers: int = 4
    psi: str = "tanh"
    e1: str = "shared"
    mode: str = "unstructured"


@dataclass
class TrainingSection:
    batch_size: int = 128
    learning_rate: float = 1e-4
    max_iterations: int = 20000
    eval_every: int = 100
    patience: int = 3
    seed: int = 0
    validation_size: int = 1000
    checkpoint: str = "runs/isdnn.json"
    history: str = "runs/history.csv"
    state_dir: str = ""


@dataclass
class EvalSection:
    estimators: List[str] = field(default_factory=lambda: ["ls", "mmse", "diag-init", "isdnn"])
    output: str = "runs/report.csv"
    format: str = "csv"
    repetitions: int = 5
    chunks: int = 100
    machine: str = ""


@dataclass
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        s = self.system
        if s.nt < 1 or s.nr < 1:
            raise ConfigError("system.nt and system.nr must be positive")
        if s.pilots < s.nt:
            raise ConfigError(f"pilot length Np={s.pilots} must be >= Nt={s.nt} (system.pilots >= system.nt)")
        if s.nt > s.nr:
            raise ConfigError(f"Nt={s.nt} exceeds Nr={s.nr}; estimation is underdetermined")
        if 4 * s.nt > s.nr:
            warnings.warn(f"Nt={s.nt} > Nr/4: outside the Nt << Nr regime", stacklevel=2)
        if s.modulation.lower() != "16qam":
            raise ConfigError("only 16qam pilots are supported")
        if self.channel.model not in ("rayleigh", "structured"):
            raise ConfigError("channel.model must be rayleigh or structured")
        if self.network.layers < 1:
            raise ConfigError("network.layers must be >= 1")
        if not self.dataset.snr_db:
            raise ConfigError("dataset.snr_db must be non-empty")
        if self.dataset.train_size < 0 or self.dataset.test_size < 0:
            raise ConfigError("dataset sizes must be non-negative")
        if self.eval.format not in ("csv", "json"):
            raise ConfigError("eval.format must be csv or json")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _hints(cls):
    return typing.get_type_hints(cls)


def _merge(obj, data: dict, prefix: str = ""):
    hints = _hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {prefix}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{key} must be an object")
            _merge(current, value, f"{prefix}{key}.")
        else:
            setattr(obj, key, coerce(hints[key], value, f"{prefix}{key}"))
    return obj


def coerce(hint, value, key: str):
    """Convert a JSON or command-line value to the annotated field type."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None or value == "":
            return None
        return coerce(next(a for a in args if a is not type(None)), value, key)
    try:
        if origin in (list, List):
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else [v for v in value.split(",") if v]
            return [coerce(args[0], v, key) for v in value] if args else list(value)
        if hint is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if hint is float:
            return float(value)
        if hint is str:
            return str(value)
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc
    return value


def config_keys() -> List[tuple]:
    """Every leaf key as ``(dotted_name, type_hint, default)``."""
    out = []

    def walk(obj, prefix):
        hints = _hints(type(obj))
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(value, f"{prefix}{f.name}.")
            else:
                out.append((f"{prefix}{f.name}", hints[f.name], value))

    walk(RunConfig(), "")
    return out


def set_key(cfg: RunConfig, dotted: str, value: Any) -> None:
    *path, leaf = dotted.split(".")
    obj = cfg
    for p in path:
        obj = getattr(obj, p)
    setattr(obj, leaf, coerce(_hints(type(obj))[leaf], value, dotted))


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise StorageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        _merge(cfg, data)
    for key, value in (overrides or {}).items():
        set_key(cfg, key, value)
    return cfg
