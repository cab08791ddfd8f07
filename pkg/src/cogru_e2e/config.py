"""Experiment configuration: YAML documents checked against the dataclass schemas.

A run starts from a named profile (``desk`` or ``paper``), applies the user's
YAML on top, and writes the fully resolved result next to its outputs. Unknown
keys and ill-typed values are rejected with the offending line number.
"""

from __future__ import annotations

import copy
import dataclasses
import typing
from dataclasses import dataclass, field

import yaml

from .channel import LinkConfig, NlinConfig
from .dsp import DspConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class NlinSection:
    """``fit: true`` estimates the coefficients from SSFM runs before training."""

    fit: bool = True
    sigma_ase_sq: float = 1e-6
    eta_nl: float = 0.0
    kappa_coeff: float = 0.0

    def coefficients(self):
        return NlinConfig(self.sigma_ase_sq, self.eta_nl, self.kappa_coeff)


@dataclass
class SweepConfig:
    powers_dbm: tuple = (-2.0, -1.0, 0.0, 1.0)
    distances_km: tuple = (320.0,)
    n_symbols: int = 4096
    workers: int = 1

    def __post_init__(self):
        if not self.powers_dbm or not self.distances_km:
            raise ValueError("sweep needs at least one power and one distance")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class BenchmarkConfig:
    n_symbols: int = 16384
    windows: tuple = (11, 21, 41)
    hidden: int = 32
    block: int = 256
    edge_discard: int = 64
    warmup: int = 3
    repeats: int = 15

    def __post_init__(self):
        if self.warmup < 3 or self.repeats < 5:
            raise ValueError("benchmark needs warmup >= 3 and repeats >= 5")
        for w in self.windows:
            if w % 2 == 0 or w < 3:
                raise ValueError(f"window {w} must be an odd integer >= 3")


@dataclass
class ExperimentConfig:
    seed: int = 1
    link: LinkConfig = field(default_factory=LinkConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    nlin: NlinSection = field(default_factory=NlinSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def train_config(self):
        return dataclasses.replace(self.train, seed=self.seed)


# Fields owned elsewhere in the document are hidden from a section's schema.
_HIDDEN = {TrainConfig: {"seed"}}

PROFILES = {
    "desk": {},
    "paper": {
        "link": {"n_channels": 5, "n_spans": 12, "sps": 16},
        "train": {"n_symbols": 16384, "phase1_epochs": 500, "phase2_epochs": 2000},
        "sweep": {"powers_dbm": [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0],
                  "distances_km": [480.0, 640.0, 800.0, 960.0], "n_symbols": 16384},
    },
}


def _hints(cls):
    return typing.get_type_hints(cls)


def _fields(cls):
    hidden = _HIDDEN.get(cls, set())
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in hidden}


def _tuple_item_type(f):
    default = f.default_factory() if f.default is dataclasses.MISSING else f.default
    return type(default[0]) if default else float


def _coerce(value, tp, where, item=float):
    if dataclasses.is_dataclass(tp):
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(_coerce(v, item, where) for v in value)
    raise ConfigError(f"{where}: unsupported type {tp}")


def _build(cls, data: dict, lines: dict, path=""):
    """Instantiate ``cls`` from ``data``, recursing into nested dataclasses."""
    hints = _hints(cls)
    fields = _fields(cls)
    kwargs = {}
    for key, value in data.items():
        dotted = f"{path}{key}"
        where = f"line {lines.get(dotted, '?')}: {dotted}"
        if key not in fields:
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(fields))})")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            kwargs[key] = _build(tp, value, lines, dotted + ".")
        else:
            kwargs[key] = _coerce(value, tp, where, _tuple_item_type(fields[key])
                                  if tp is tuple else float)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"line {lines.get(path.rstrip('.'), '?')}: {path.rstrip('.') or 'config'}: {exc}") from exc


def _compose(text):
    """Parse YAML, returning (plain data, {dotted key: line number})."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    lines = {}

    def walk(n, path):
        if isinstance(n, yaml.MappingNode):
            seen = set()
            for k, v in n.value:
                key = k.value
                if key in seen:
                    raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {path}{key}")
                seen.add(key)
                lines[f"{path}{key}"] = k.start_mark.line + 1
                walk(v, f"{path}{key}.")

    if node is None:
        return {}, lines
    walk(node, "")
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("line 1: top level must be a mapping")
    return data, lines


def _merge(base: dict, over: dict):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(text="", profile="desk", seed=None) -> ExperimentConfig:
    """Profile defaults, then the YAML ``text``, then an explicit ``seed``."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (choose from {', '.join(PROFILES)})")
    data, lines = _compose(text)
    merged = _merge(PROFILES[profile], data)
    if seed is not None:
        merged["seed"] = seed
    cfg = _build(ExperimentConfig, merged, lines)
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return cfg


def load_config_file(path, profile="desk", seed=None) -> ExperimentConfig:
    with open(path) as fh:
        return load_config(fh.read(), profile, seed)


def to_dict(cfg) -> dict:
    out = {}
    for name in _fields(type(cfg)):
        v = getattr(cfg, name)
        if dataclasses.is_dataclass(v):
            out[name] = to_dict(v)
        elif isinstance(v, tuple):
            out[name] = list(v)
        else:
            out[name] = v
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    """Resolved configuration as YAML; loading it back reproduces ``cfg``."""
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False)
