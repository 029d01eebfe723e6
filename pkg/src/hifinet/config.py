"""Experiment configuration: one YAML file, overridable key by key.

Unknown keys are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from hifinet.edge import EdgeConfig
from hifinet.energy import EnergyParams
from hifinet.errors import ConfigError, HifinetError
from hifinet.ign import IgnConfig
from hifinet.inject import InjectionParams
from hifinet.pipeline import PipelineConfig

SOURCES = ("synthetic", "intel", "csv")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` style numbers as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)


DEFAULT_RATES = (0.05, 0.10, 0.15, 0.20)


@dataclass
class SyntheticSource:
    n_nodes: int = 6
    n_days: float = 90.0
    sample_interval_s: float = 3600.0
    base_temp: float = 25.0
    daily_amplitude: float = 3.0
    noise_sigma: float = 0.2
    offset_sigma: float = 0.5
    seed: int = 1


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticSource = field(default_factory=SyntheticSource)
    intel_path: str | None = None
    # readings outside this band are dropped while parsing the Intel file
    intel_valid_range: list[float] | None = field(default_factory=lambda: [-10.0, 60.0])
    # node id -> per-node "timestamp,value" CSV
    csv_paths: dict[int, str] = field(default_factory=dict)
    grid_interval_s: float = 3600.0
    nodes: list[int] | None = None
    start: float | None = None
    end: float | None = None


@dataclass
class InjectionConfig:
    rates: list[float] = field(default_factory=lambda: list(DEFAULT_RATES))
    seed: int = 3
    # node id -> fault class name; default is one type per node, in class order
    assignment: dict[int, str] | None = None
    params: InjectionParams = field(default_factory=InjectionParams)


@dataclass
class TopologyConfig:
    file: str | None = None
    spacing: float = 30.0
    radio_range: float = 45.0


@dataclass
class TradeoffConfig:
    t_values: list[int] = field(default_factory=lambda: list(range(10)))
    rate: float = 0.20
    # window spacing for the study; None means non-overlapping (stride w)
    stride: int | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    windows: PipelineConfig = field(default_factory=PipelineConfig)
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    edge: EdgeConfig = field(default_factory=EdgeConfig)
    ign: IgnConfig = field(default_factory=IgnConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    energy: EnergyParams = field(default_factory=EnergyParams)
    tradeoff: TradeoffConfig = field(default_factory=TradeoffConfig)
    output_dir: str = "out"

    def validate(self, workdir: Path | None = None) -> "ExperimentConfig":
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.data.source!r}")
        if not self.injection.rates:
            raise ConfigError("injection.rates is empty")
        for r in self.injection.rates:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"fault rate {r} outside [0, 1)")
        if self.tradeoff.rate not in self.injection.rates:
            raise ConfigError(f"tradeoff.rate {self.tradeoff.rate} is not among injection.rates")
        if any(t < 0 for t in self.tradeoff.t_values):
            raise ConfigError("tradeoff.t_values must be >= 0")
        if self.edge.d_in != len(self.windows.channels):
            raise ConfigError(f"edge.d_in={self.edge.d_in} but windows.channels has {len(self.windows.channels)} entries")
        if self.ign.d0 != self.ign.n_classes + self.edge.d_emb:
            raise ConfigError(f"ign.d0 must equal {self.ign.n_classes} + edge embedding {self.edge.d_emb}")
        base = workdir or Path(".")
        paths = []
        if self.data.source == "intel":
            if not self.data.intel_path:
                raise ConfigError("data.intel_path is required for the intel source")
            paths.append(self.data.intel_path)
        if self.data.source == "csv":
            if not self.data.csv_paths:
                raise ConfigError("data.csv_paths is empty")
            paths.extend(self.data.csv_paths.values())
        if self.topology.file:
            paths.append(self.topology.file)
        for p in paths:
            if not (base / p).exists():
                raise ConfigError(f"referenced path does not exist: {p}")
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except HifinetError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


_NESTED = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "windows"): PipelineConfig,
    (ExperimentConfig, "injection"): InjectionConfig,
    (ExperimentConfig, "edge"): EdgeConfig,
    (ExperimentConfig, "ign"): IgnConfig,
    (ExperimentConfig, "topology"): TopologyConfig,
    (ExperimentConfig, "energy"): EnergyParams,
    (ExperimentConfig, "tradeoff"): TradeoffConfig,
    (DataConfig, "synthetic"): SyntheticSource,
    (InjectionConfig, "params"): InjectionParams,
}


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as YAML scalars or lists."""
    out = copy.deepcopy(raw)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        try:
            node[parts[-1]] = _yaml_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {value!r}: {exc}") from exc
    return out


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, raw or {}, "")


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = _yaml_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(apply_overrides(raw, overrides or []))


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
