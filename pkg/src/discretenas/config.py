"""Run configuration: a versioned JSON document with a strict schema.

Unknown keys are rejected, and every error names the offending field path
(``config.search.epochs``). :func:`resolve` returns the fully expanded
document that each run writes to its manifest.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Union, get_type_hints

from .regularizers import (GROUP_PRESETS, ConfigError, EdgeGroup, ScheduleSpec, Schedules, group_preset,
                           validate_groups)
from .supernet import NetworkConfig

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "DISCRETENAS_OUTPUT_ROOT"


@dataclass
class TaskConfig:
    kind: str = "synthetic"
    classes: int = 4
    train_count: int = 200
    test_count: int = 200
    height: int = 16
    width: int = 16
    path: str = ""

    def validate(self, where: str) -> None:
        if self.kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"{where}.kind: expected 'synthetic' or 'cifar10', got {self.kind!r}")
        if self.kind == "cifar10" and not self.path:
            raise ConfigError(f"{where}.path: required for the cifar10 task")
        if self.kind == "synthetic" and self.path:
            raise ConfigError(f"{where}.path: a synthetic task takes no path (exactly one task source)")
        for name in ("classes", "train_count", "test_count", "height", "width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{where}.{name}: must be positive")
        if self.kind == "synthetic" and self.classes < 2:
            raise ConfigError(f"{where}.classes: need at least 2")


@dataclass
class NetworkSection:
    channels: int = 4
    cells: int = 1
    nodes: int = 6

    def validate(self, where: str) -> None:
        for name in ("channels", "cells"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{where}.{name}: must be positive")
        if self.nodes < 3:
            raise ConfigError(f"{where}.nodes: must be at least 3")


@dataclass
class SearchSection:
    epochs: int = 30
    batch_size: int = 20
    lr0: float = 0.25
    momentum: float = 0.9
    weight_decay: float = 3e-4
    arch_lr: float = 0.05
    arch_betas: List[float] = field(default_factory=lambda: [0.5, 0.999])
    arch_weight_decay: float = 1e-3
    arch_eps: float = 1e-8
    beta_bound: float = 1.0
    beta_init_offset: float = 0.0
    split_fraction: float = 0.5
    precision: str = "float64"

    def validate(self, where: str) -> None:
        if self.epochs < 1:
            raise ConfigError(f"{where}.epochs: must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"{where}.batch_size: must be positive")
        if len(self.arch_betas) != 2 or not all(0 <= b < 1 for b in self.arch_betas):
            raise ConfigError(f"{where}.arch_betas: expected two values in [0, 1)")
        if not 0 < self.split_fraction < 1:
            raise ConfigError(f"{where}.split_fraction: must lie in (0, 1)")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"{where}.precision: expected 'float64' or 'float32'")
        for name in ("lr0", "arch_lr", "arch_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{where}.{name}: must be positive")


@dataclass
class ScheduleSection:
    kind: str = "const"
    activation: int = 0
    k: float = 5.0
    t0: float = 0.5

    def spec(self, where: str) -> ScheduleSpec:
        try:
            return ScheduleSpec(self.kind, self.activation, self.k, self.t0)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None


@dataclass
class RegularizerSection:
    enabled: bool = True
    lambda_c: ScheduleSection = field(default_factory=lambda: ScheduleSection("linear"))
    lambda_1: ScheduleSection = field(default_factory=lambda: ScheduleSection("log"))
    lambda_2: ScheduleSection = field(default_factory=lambda: ScheduleSection("const"))
    beta_multiplier: float = 4.0

    def schedules(self, where: str) -> Schedules:
        return Schedules(self.lambda_c.spec(f"{where}.lambda_c"), self.lambda_1.spec(f"{where}.lambda_1"),
                         self.lambda_2.spec(f"{where}.lambda_2"), self.beta_multiplier, self.enabled)


@dataclass
class GroupSection:
    preset: str = ""
    explicit: List[Dict[str, Any]] = field(default_factory=list)

    def groups(self, num_nodes: int, where: str) -> List[EdgeGroup]:
        if bool(self.preset) == bool(self.explicit):
            raise ConfigError(f"{where}: give exactly one of 'preset' or 'explicit'")
        if self.preset:
            if self.preset not in GROUP_PRESETS:
                raise ConfigError(f"{where}.preset: unknown preset {self.preset!r}; "
                                  f"choose from {sorted(GROUP_PRESETS)}")
            try:
                return group_preset(self.preset, num_nodes)
            except ConfigError as exc:
                raise ConfigError(f"{where}.preset: {exc}") from None
        groups = []
        for n, item in enumerate(self.explicit):
            at = f"{where}.explicit[{n}]"
            if not isinstance(item, Mapping) or set(item) != {"edges", "k"}:
                raise ConfigError(f"{at}: expected an object with keys 'edges' and 'k'")
            try:
                groups.append(EdgeGroup(tuple(tuple(e) for e in item["edges"]), int(item["k"])))
            except (ConfigError, TypeError, ValueError) as exc:
                raise ConfigError(f"{at}: {exc}") from None
        try:
            validate_groups(groups, num_nodes)
        except ConfigError as exc:
            raise ConfigError(f"{where}.explicit: {exc}") from None
        return groups


@dataclass
class RetrainSection:
    epochs: int = 20
    batch_size: int = 32
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    channels: int = 8
    cells: int = 2

    def validate(self, where: str) -> None:
        if self.epochs < 0:
            raise ConfigError(f"{where}.epochs: must be non-negative")
        for name in ("batch_size", "channels", "cells"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{where}.{name}: must be positive")


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "run"
    seed: int = 0
    output_dir: str = ""
    task: TaskConfig = field(default_factory=TaskConfig)
    network: NetworkSection = field(default_factory=NetworkSection)
    search: SearchSection = field(default_factory=SearchSection)
    regularizers: RegularizerSection = field(default_factory=RegularizerSection)
    groups: GroupSection = field(default_factory=lambda: GroupSection(preset="balanced-8"))
    retrain: RetrainSection = field(default_factory=RetrainSection)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config.schema_version: unsupported version {self.schema_version}")
        self.task.validate("config.task")
        self.network.validate("config.network")
        self.search.validate("config.search")
        self.retrain.validate("config.retrain")
        self.schedules()
        self.edge_groups()

    def schedules(self) -> Schedules:
        return self.regularizers.schedules("config.regularizers")

    def edge_groups(self) -> List[EdgeGroup]:
        return self.groups.groups(self.network.nodes, "config.groups")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(3, self.network.channels, self.network.cells, self.network.nodes, self.task.classes)

    def retrain_network_config(self) -> NetworkConfig:
        return NetworkConfig(3, self.retrain.channels, self.retrain.cells, self.network.nodes, self.task.classes)

    @property
    def run_id(self) -> str:
        return f"{self.name}-s{self.seed}"

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.run_id

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, data: Any, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key")
    defaults = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        at = f"{where}.{f.name}"
        default = getattr(defaults, f.name)
        if dataclasses.is_dataclass(default):
            kwargs[f.name] = _build(type(default), value, at)
        else:
            kwargs[f.name] = _coerce(value, default, hints[f.name], at)
    return cls(**kwargs)


def _coerce(value: Any, default: Any, hint, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def from_dict(data: Mapping) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config: expected a JSON object")
    if "schema_version" not in data:
        raise ConfigError("config.schema_version: required")
    cfg = _build(RunConfig, data, "config")
    cfg.validate()
    return cfg


def load(path: Union[str, os.PathLike]) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return from_dict(data)


def resolve(cfg: RunConfig) -> dict:
    """Fully expanded configuration, including the concrete edge groups."""
    d = cfg.to_dict()
    d["resolved_groups"] = [{"edges": [list(e) for e in g.edges], "k": g.k} for g in cfg.edge_groups()]
    return d


def toy_config(**overrides) -> RunConfig:
    """Desk-scale defaults: 1 cell, width 4, 4-class 16x16 synthetic data."""
    cfg = RunConfig()
    for key, value in overrides.items():
        section, _, attr = key.partition("__")
        if attr:
            setattr(getattr(cfg, section), attr, value)
        else:
            setattr(cfg, section, value)
    cfg.validate()
    return cfg


def paper_config() -> RunConfig:
    """Full-scale search settings: 8 cells, 16 channels, 50 epochs on CIFAR-10."""
    cfg = RunConfig(
        name="cifar10",
        task=TaskConfig(kind="cifar10", classes=10, height=32, width=32, path="cifar-10-batches-bin"),
        network=NetworkSection(channels=16, cells=8, nodes=6),
        search=SearchSection(epochs=50, batch_size=64, arch_lr=3e-4),
    )
    return cfg
