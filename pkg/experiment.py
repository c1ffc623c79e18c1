"""Experiment configuration: defaults, file loading, flag overrides and provenance."""

import dataclasses
import json
import logging
import os
import pathlib
from dataclasses import dataclass, field
from typing import List, Optional

import yaml

from dynamics import LOG_MODES, Variant
from errors import ConfigError

__version__ = '1.0.0'

logger = logging.getLogger(__name__)

GRAPH_KINDS = ('powerlaw', 'regular', 'star_of_stars', 'planted', 'path', 'cycle', 'star', 'complete', 'file')
SUBCRITICAL_CAP_PER_VERTEX = 50.0
SUPERCRITICAL_CAP = 1e4

FIELD_KINDS = {
    'graph': 'str', 'n': 'int', 'sizes': 'int_list', 'gamma': 'float', 'd_min': 'int', 'd_max': 'int?',
    'degree': 'int', 'order': 'int', 'graph_file': 'str?', 'variant': 'str', 'lambdas': 'float_list',
    'alpha': 'float', 'replicates': 'int', 't_cap': 'float?', 'until': 'str', 'horizon': 'float',
    'realizations': 'int', 'trials': 'int', 'self_test': 'bool', 'min_samples': 'int', 'seed': 'int',
    'out': 'str', 'threads': 'int', 'log_mode': 'str',
}
KIND_NAMES = {
    'str': 'a string', 'int': 'an integer', 'float': 'a number', 'bool': 'true or false',
    'int_list': 'a list of integers', 'float_list': 'a list of numbers',
}


def _to_int(value) -> int:
    if isinstance(value, bool):
        raise TypeError(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(value)
        return int(value)
    return int(value)


def _to_float(value) -> float:
    if isinstance(value, bool):
        raise TypeError(value)
    return float(value)


def _convert(kind: str, value):
    if kind == 'str':
        if isinstance(value, (list, dict, bool)):
            raise TypeError(value)
        return str(value)
    if kind == 'int':
        return _to_int(value)
    if kind == 'float':
        return _to_float(value)
    if kind == 'bool':
        if not isinstance(value, bool):
            raise TypeError(value)
        return value
    if not isinstance(value, (list, tuple)):
        raise TypeError(value)
    convert = _to_int if kind == 'int_list' else _to_float
    return [convert(x) for x in value]


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get('CONTACT_SIM_THREADS', 1)))
    except ValueError:
        return 1


@dataclass
class ExperimentConfig:
    # graph
    graph: str = 'regular'
    n: int = 100
    sizes: List[int] = field(default_factory=list)
    gamma: float = 3.5
    d_min: int = 3
    d_max: Optional[int] = None
    degree: int = 3
    order: int = 3
    graph_file: Optional[str] = None
    # process
    variant: str = 'vigilance'
    lambdas: List[float] = field(default_factory=lambda: [1.0])
    alpha: float = 2.0
    replicates: int = 10
    t_cap: Optional[float] = None
    until: str = 'extinction'
    # coupling
    horizon: float = 20.0
    realizations: int = 100
    trials: int = 1000
    self_test: bool = False
    # analysis
    min_samples: int = 20
    # run
    seed: int = 0
    out: str = 'results'
    threads: int = field(default_factory=_default_threads)
    log_mode: str = 'thinned'

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        if 'config' in data and 'version' in data:
            data = data['config']
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def load(cls, path) -> 'ExperimentConfig':
        path = pathlib.Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with path.open(encoding='utf-8') as handle:
                data = yaml.safe_load(handle) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path} does not hold a mapping")
        return cls.from_dict(data)

    def with_overrides(self, seed=None, out=None, threads=None, log_mode=None, params=()) -> 'ExperimentConfig':
        """Copy with command-line flags applied; `params` holds 'key=value' strings"""
        changes = {}
        for item in params or ():
            key, sep, raw = item.partition('=')
            if not sep:
                raise ConfigError(f"--param expects key=value, got {item!r}")
            changes[key.strip()] = yaml.safe_load(raw)
        for key, value in (('seed', seed), ('out', out), ('threads', threads), ('log_mode', log_mode)):
            if value is not None:
                changes[key] = value
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)

    def _coerce_types(self):
        """Normalise field types in place; values that do not convert raise ConfigError"""
        for name, kind in FIELD_KINDS.items():
            value = getattr(self, name)
            optional = kind.endswith('?')
            kind = kind.rstrip('?')
            if value is None and optional:
                continue
            try:
                setattr(self, name, _convert(kind, value))
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be {KIND_NAMES[kind]}, got {value!r}") from None

    def validate(self):
        self._coerce_types()
        if self.graph not in GRAPH_KINDS:
            raise ConfigError(f"graph must be one of {GRAPH_KINDS}, got {self.graph!r}")
        if self.graph == 'file' and not self.graph_file:
            raise ConfigError("graph 'file' needs graph_file")
        try:
            Variant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown variant {self.variant!r}") from None
        if self.n < 1 or any(size < 1 for size in self.sizes):
            raise ConfigError("graph sizes must be positive")
        if not self.lambdas:
            raise ConfigError("lambda grid is empty")
        if any(x < 0 for x in self.lambdas) or self.alpha < 0:
            raise ConfigError("lambda and alpha must be non-negative")
        if self.replicates < 1 or self.realizations < 1 or self.trials < 1:
            raise ConfigError("replicates, realizations and trials must be positive")
        if self.t_cap is not None and self.t_cap <= 0:
            raise ConfigError("t_cap must be positive")
        if self.log_mode not in LOG_MODES:
            raise ConfigError(f"log_mode must be one of {LOG_MODES}")
        if self.until not in ('extinction', 'absorption'):
            raise ConfigError("until must be 'extinction' or 'absorption'")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def size_grid(self) -> List[int]:
        return list(self.sizes) if self.sizes else [self.n]

    def resolve_t_cap(self, n: int, lam: float) -> float:
        """Explicit t_cap, else 50 n for subcritical vigilance runs and 1e4 otherwise"""
        if self.t_cap is not None:
            return float(self.t_cap)
        if self.variant == Variant.VIGILANCE.value and lam < self.alpha:
            return SUBCRITICAL_CAP_PER_VERTEX * n
        return SUPERCRITICAL_CAP

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def provenance(self) -> dict:
        """The exact config and code version, embedded in every output record"""
        return {'config': self.to_dict(), 'version': __version__}

    def dump(self, path) -> pathlib.Path:
        """Write the config with the code version as sorted-key JSON"""
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.provenance(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return path
