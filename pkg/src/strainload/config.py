"""Strict, schema-versioned pipeline configuration loaded from YAML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .fem import Material
from .geometry import GeometryParams, SensorConfig
from .pressure import FlightCondition, GeneratorParams, condition_grid

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    machs: tuple = (5.0,)
    alphas: tuple = (0.0,)
    betas: tuple = (0.0,)
    altitude: float = 20000.0

    def conditions(self):
        return condition_grid(self.machs, self.alphas, self.betas, self.altitude)


@dataclass(frozen=True)
class SnapshotConfig:
    pod: GridConfig = GridConfig(machs=(5.0, 5.5, 6.0, 6.5, 7.0),
                                 alphas=(0.0, 2.0, 4.0, 6.0, 8.0, 10.0),
                                 betas=(0.0, 5.0, 10.0))
    prior: GridConfig = GridConfig(machs=(5.0, 6.0, 7.0),
                                   alphas=tuple(float(a) for a in range(-8, 9, 2)),
                                   betas=tuple(float(b) for b in range(-8, 9, 2)))


@dataclass(frozen=True)
class PodConfig:
    energy: float | None = 0.999
    rank: int | None = None


@dataclass(frozen=True)
class NoiseConfig:
    fraction: float = 0.01


@dataclass(frozen=True)
class GammaConfig:
    policy: str = "morozov"          # "morozov" | "fixed"
    value: float | None = None       # used by the fixed policy
    bracket: tuple = (1e-8, 1e4)     # relative to the leading eigenvalue
    rtol: float = 0.01
    calibration_size: int = 200
    validation_size: int = 50


@dataclass(frozen=True)
class StudyCondition:
    mach: float = 5.0
    alpha: float = 6.0
    beta: float = 6.0
    altitude: float = 20000.0

    def condition(self) -> FlightCondition:
        return FlightCondition(self.mach, self.alpha, self.beta, self.altitude)


@dataclass(frozen=True)
class ExperimentConfig:
    case1_replicates: int = 50
    case2_replicates: int = 100
    case2_condition: StudyCondition = StudyCondition()
    zero_noise_gamma: float = 1e-6            # times the leading eigenvalue
    coefficient_tolerance: float = 0.1        # epsilon_k as a fraction of max |C_k|
    latency_queries: int = 2000
    latency_sizes: tuple = ((10000, 54),)
    workers: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    schema_version: int = SCHEMA_VERSION
    output_dir: str = "runs/default"
    seed: int = 20240601
    geometry: GeometryParams = GeometryParams()
    material: Material = Material()
    sensors: str = SensorConfig.CONFIG2.value
    generator: GeneratorParams = GeneratorParams()
    snapshots: SnapshotConfig = SnapshotConfig()
    pod: PodConfig = PodConfig()
    noise: NoiseConfig = NoiseConfig()
    gamma: GammaConfig = GammaConfig()
    reference_mach: float = 6.0
    experiments: ExperimentConfig = ExperimentConfig()

    def section(self, *names) -> dict:
        return {n: _to_plain(getattr(self, n)) for n in names}

    def section_digest(self, *names) -> str:
        blob = json.dumps(self.section(*names), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return _to_plain(self)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _tupleize(v):
    return tuple(_tupleize(x) for x in v) if isinstance(v, (list, tuple)) else v


def _numeric_tuple(v, where):
    """Nested lists of numbers; numeric strings are accepted (see _build)."""
    if isinstance(v, (list, tuple)):
        return tuple(_numeric_tuple(x, where) for x in v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected numbers, got {v!r}") from exc
    return v


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, where)
        elif "float" in str(fields[name].type) and isinstance(value, (int, str)) \
                and not isinstance(value, bool):
            # YAML 1.1 reads exponents without a dot ("71.7e9") as strings.
            try:
                kwargs[name] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{where}: expected a number, got {value!r}") from exc
        elif isinstance(default, tuple):
            kwargs[name] = _numeric_tuple(value, where)
        else:
            kwargs[name] = _tupleize(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _validate(cfg: PipelineConfig) -> PipelineConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {cfg.schema_version} unsupported "
                          f"(expected {SCHEMA_VERSION})")
    try:
        SensorConfig(cfg.sensors)
    except ValueError as exc:
        raise ConfigError(f"sensors: unknown configuration {cfg.sensors!r}") from exc
    for name in ("pod", "prior"):
        grid = getattr(cfg.snapshots, name)
        if not (grid.machs and grid.alphas and grid.betas):
            raise ConfigError(f"snapshots.{name}: grids must be nonempty")
        try:
            grid.conditions()
        except ValueError as exc:
            raise ConfigError(f"snapshots.{name}: {exc}") from exc
    if (cfg.pod.energy is None) == (cfg.pod.rank is None):
        raise ConfigError("pod: set exactly one of energy or rank")
    if cfg.noise.fraction <= 0:
        raise ConfigError("noise.fraction must be positive")
    g = cfg.gamma
    if g.policy not in ("morozov", "fixed"):
        raise ConfigError(f"gamma.policy must be 'morozov' or 'fixed', got {g.policy!r}")
    if g.policy == "fixed" and not (g.value is not None and g.value > 0):
        raise ConfigError("gamma.value must be positive for the fixed policy")
    if g.calibration_size < 20:
        raise ConfigError("gamma.calibration_size must be at least 20")
    e = cfg.experiments
    if e.case1_replicates < 1 or e.case2_replicates < 1 or e.workers < 1:
        raise ConfigError("experiment replicate and worker counts must be positive")
    try:
        e.case2_condition.condition()
    except ValueError as exc:
        raise ConfigError(f"experiments.case2_condition: {exc}") from exc
    return cfg


def config_from_dict(data: dict) -> PipelineConfig:
    return _validate(_build(PipelineConfig, data or {}, ""))


def load_config(path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(data)


def override(cfg: PipelineConfig, **changes) -> PipelineConfig:
    """Apply dotted-path overrides such as ``experiments.case1_replicates=5``."""
    data = cfg.to_dict()
    for key, value in changes.items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return config_from_dict(data)
