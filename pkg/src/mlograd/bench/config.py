"""Benchmark configuration: strict JSON schema with documented defaults.

A config file is a single JSON object. Unknown keys anywhere are rejected
with the offending key named, so typos fail loudly. Every task fills in the
defaults below and echoes the fully-resolved configuration into its report.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from ..errors import ConfigError
from ..problem import ProblemConfig

__all__ = ["TASKS", "DataConfig", "BenchConfig", "load_config", "dump_config"]

TASKS = ("gradcheck", "paths", "oracle", "mixture", "reweight", "trilevel")


@dataclass
class DataConfig:
    """Synthetic data knobs shared by the benchmark tasks."""

    dimensions: int = 4
    class_count: int = 2
    imbalance_factor: float = 10.0
    separation: float = 2.2
    samples_per_split: int = 160
    batch_size: int = 32
    shift_magnitude: float = 1.25
    corrupted_fraction: float = 0.3
    noise: float = 0.05
    feature_map_count: int = 3
    true_map: int = 2
    proximal_weight: float = 0.05
    random_graphs: int = 1000
    max_graph_size: int = 8

    def validate(self) -> None:
        if self.imbalance_factor < 1:
            raise ConfigError("data.imbalance_factor must be >= 1")
        if self.dimensions < 1 or self.class_count < 2:
            raise ConfigError("data.dimensions must be >= 1 and data.class_count >= 2")
        if self.samples_per_split < 4 or self.batch_size < 1:
            raise ConfigError("data.samples_per_split must be >= 4 and data.batch_size >= 1")
        if not 0.0 <= self.corrupted_fraction <= 1.0:
            raise ConfigError("data.corrupted_fraction must lie in [0, 1]")
        if not 0 <= self.true_map < self.feature_map_count:
            raise ConfigError("data.true_map must index a feature map")
        if self.random_graphs < 1 or not 2 <= self.max_graph_size:
            raise ConfigError("data.random_graphs must be >= 1 and data.max_graph_size >= 2")


@dataclass
class BenchConfig:
    """Top-level benchmark settings; ``problems`` overrides per-problem fields."""

    task: str
    seed: int = 0
    global_iterations: int = 300
    output_dir: str | None = None
    quiet: bool = False
    problems: dict[str, dict[str, Any]] = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.global_iterations < 1:
            raise ConfigError("global_iterations must be >= 1")
        self.data.validate()
        known = {f.name for f in fields(ProblemConfig)}
        for pname, block in self.problems.items():
            if not isinstance(block, Mapping):
                raise ConfigError(f"problems.{pname} must be an object")
            for key in block:
                if key not in known:
                    raise ConfigError(f"problems.{pname}: unknown key {key!r}")

    def problem_config(self, name: str, base: ProblemConfig) -> ProblemConfig:
        """Resolve one problem's config: task defaults overridden by the file."""
        overrides = self.problems.get(name, {})
        try:
            return base.replace_from(overrides, where=f"problems.{name}")
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "BenchConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
        if "task" not in raw:
            raise ConfigError("missing required key 'task'")
        data_raw = raw.get("data", {})
        if not isinstance(data_raw, Mapping):
            raise ConfigError("data must be an object")
        data_known = {f.name for f in fields(DataConfig)}
        data_unknown = set(data_raw) - data_known
        if data_unknown:
            raise ConfigError(f"data: unknown key {sorted(data_unknown)[0]!r}")
        cfg = cls(
            task=raw["task"],
            seed=int(raw.get("seed", 0)),
            global_iterations=int(raw.get("global_iterations", 300)),
            output_dir=raw.get("output_dir"),
            quiet=bool(raw.get("quiet", False)),
            problems={k: dict(v) for k, v in raw.get("problems", {}).items()},
            data=DataConfig(**data_raw),
        )
        cfg.validate()
        return cfg


def load_config(path: str | Path) -> BenchConfig:
    """Parse a config file, reporting JSON position or offending field."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return BenchConfig.from_dict(raw)


def dump_config(config: BenchConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=False) + "\n")
