"""Run configuration: one JSON document with strict schema validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass

from .dynamics import VehicleParams
from .env import EnvConfig
from .neural import AutoencoderConfig
from .safety import LanderGeometry, SafetyThresholds
from .sensor import SensorParams
from .td3 import Td3Config
from .terrain import TerrainParams

SEED_ENV_VAR = "HDA_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    terrain_dir: str = "runs/terrain"
    autoencoder: str = "runs/autoencoder.json"
    checkpoint_dir: str = "runs/checkpoints"
    out_dir: str = "runs/out"


@dataclass
class RunConfig:
    seed: int = 0
    encoder: str = "autoencoder"  # or "pooled"
    autoencoder_rollouts: int = 200
    terrain: TerrainParams = field(default_factory=TerrainParams)
    geometry: LanderGeometry = field(default_factory=LanderGeometry)
    thresholds: SafetyThresholds = field(default_factory=SafetyThresholds)
    sensor: SensorParams = field(default_factory=SensorParams)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def env_config(self, **overrides) -> EnvConfig:
        return dataclasses.replace(self.env, vehicle=self.vehicle, sensor=self.sensor, **overrides)


# Sections shared at top level are not repeated inside ``env``.
_EXCLUDED = {("env", "vehicle"), ("env", "sensor")}


def _section_fields(cls, section):
    return [f for f in fields(cls) if (section, f.name) not in _EXCLUDED and not f.name.startswith("_")]


def to_dict(obj, section=None):
    out = {}
    for f in _section_fields(type(obj), section):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            out[f.name] = to_dict(value, f.name)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(value, int):
            if float(value).is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return type(default)(value) if isinstance(default, float) else value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{key}: expected a list of {len(default)} values, got {value!r}")
        return tuple(_coerce(v, d, f"{key}[{i}]") for i, (v, d) in enumerate(zip(value, default)))
    if default is None:
        if value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number or null, got {value!r}")
        return value
    return value


def from_dict(cls, doc, prefix="", section=None):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    defaults = cls()
    known = {f.name: f for f in _section_fields(cls, section)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = getattr(defaults, name)
        key = prefix + name
        if is_dataclass(default):
            kwargs[name] = from_dict(type(default), value, key + ".", name)
        else:
            kwargs[name] = _coerce(value, default, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def load_config(path=None, environ=None) -> RunConfig:
    """Read a JSON config (or defaults), then apply the seed override from the environment."""
    environ = os.environ if environ is None else environ
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = from_dict(RunConfig, doc)
    if environ.get(SEED_ENV_VAR):
        try:
            cfg.seed = int(environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    try:
        cfg.terrain.validate()
        cfg.env_config().validate()
        cfg.td3.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.encoder not in ("autoencoder", "pooled"):
        raise ConfigError("encoder must be 'autoencoder' or 'pooled'")
    return cfg


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def digest(cfg: RunConfig) -> str:
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def flat_defaults(doc=None, prefix=""):
    """``(dotted.key, default)`` for every configuration key."""
    doc = to_dict(RunConfig()) if doc is None else doc
    out = []
    for name, value in doc.items():
        if isinstance(value, dict):
            out.extend(flat_defaults(value, prefix + name + "."))
        else:
            out.append((prefix + name, value))
    return out
