"""Run configuration read from one TOML file.

Layout::

    [run]    seeds, out, embeddings, branches
    [data]   generator settings
    [model]  backbone and head sizes
    [train]  optimisation and loss settings

Precedence, lowest first: built-in defaults, the config file, command-line
flags. Unknown sections or keys are errors. ``dumps`` writes the effective
config back out in the same format, so a run can be repeated from its echo.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .model import ModelConfig
from .trainer import BRANCH_PRESETS, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    num_domains: int = 4
    num_tasks: int = 4
    n_per_dataset: int = 200
    n_test: int = 100
    n_unseen: int = 400
    shift: float = 1.0
    contrast: float = 1.0
    label_subsets: tuple[tuple[int, ...], ...] | None = None


@dataclass(frozen=True)
class RunSection:
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"
    embeddings: str = ""
    branches: str = ""  # preset name; empty keeps the enable_* switches from [train]


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        cfg = self.train.with_branches(self.run.branches) if self.run.branches else self.train
        return cfg if seed is None else dataclasses.replace(cfg, seed=seed)


_SECTIONS = {"run": RunSection, "data": DataConfig, "model": ModelConfig, "train": TrainConfig}


def _coerce(cls, name: str, value):
    default = getattr(cls(), name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, tuple) or name == "label_subsets":
        if not isinstance(value, list):
            raise ConfigError(f"{cls.__name__}.{name}: expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if name == "bandwidth":
        return value if value == "median" else float(value)
    if default is not None and not isinstance(value, type(default)):
        raise ConfigError(f"{cls.__name__}.{name}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, table: dict, base=None):
    base = base if base is not None else cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{_section_name(cls)}]: {', '.join(unknown)}")
    values = {k: _coerce(cls, k, v) for k, v in table.items()}
    try:
        return dataclasses.replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{_section_name(cls)}]: {exc}") from exc


def _section_name(cls) -> str:
    return next(k for k, v in _SECTIONS.items() if v is cls)


def from_dict(doc: dict, base: RunConfig | None = None) -> RunConfig:
    base = base if base is not None else RunConfig()
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        table = doc.get(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        parts[name] = _build(cls, table, getattr(base, name))
    cfg = RunConfig(**parts)
    if cfg.run.branches and cfg.run.branches not in BRANCH_PRESETS:
        raise ConfigError(f"branches must be one of {sorted(BRANCH_PRESETS)}")
    if not cfg.run.seeds:
        raise ConfigError("run.seeds must not be empty")
    if cfg.model.num_tasks != cfg.data.num_tasks:
        raise ConfigError(f"model.num_tasks={cfg.model.num_tasks} but data.num_tasks={cfg.data.num_tasks}")
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(doc)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise ConfigError(f"cannot write {value!r}")


def dumps(cfg: RunConfig) -> str:
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in dataclasses.asdict(getattr(cfg, name)).items():
            if value is None:
                continue
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)
