"""Experiment configuration: nested dataclasses loadable from JSON or key=value text."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..distill import DistillWeights, StudentConfig, TeacherConfig
from ..geopair import DEFAULT_STRATA_EDGES
from ..sau import SauConfig
from ..synthgen import WorldConfig
from .schedule import TrainSchedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    clusters: int = 3
    fractions: tuple = (0.8, 0.1, 0.1)
    strata_edges: tuple = DEFAULT_STRATA_EDGES
    kmeans_iters: int = 50
    kmeans_tol: float = 1e-6
    zero_keep_fraction: float = 0.1
    drop_count: int = 6

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(self.fractions))
        object.__setattr__(self, "strata_edges", tuple(self.strata_edges))
        if abs(sum(self.fractions) - 1.0) > 1e-9 or len(self.fractions) != 3:
            raise ValueError("split fractions must be three values summing to 1")


DEFAULT_GRID = (
    (0.07, 0.90, 0.10),
    (0.10, 0.80, 0.10),
    (0.30, 0.60, 0.10),
    (0.50, 0.40, 0.10),
    (0.90, 0.10, 0.10),
)
DEFAULT_LAYER_GRID = ((1.35, 1.05, 0.65), (1.0, 1.0, 1.0), (0.65, 1.05, 1.35))


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    sau: SauConfig = field(default_factory=SauConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    weights: DistillWeights = field(default_factory=DistillWeights)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    sau_pretrain_epochs: int = 40
    sau_align_epochs: int = 40
    teacher_epochs: int = 200
    seeds: tuple = (0, 1, 2, 3, 4)
    grid: tuple = DEFAULT_GRID
    layer_grid: tuple = DEFAULT_LAYER_GRID

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "grid", tuple(tuple(float(v) for v in c) for c in self.grid))
        object.__setattr__(self, "layer_grid", tuple(tuple(float(v) for v in c) for c in self.layer_grid))
        if any(len(c) != 3 for c in self.grid + self.layer_grid):
            raise ValueError("grid candidates need three values each")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, **{"schedule.seed": seed})



def to_dict(cfg) -> dict:
    raw = dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else cfg
    return json.loads(json.dumps(raw))


def _build(cls, values: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for k, v in values.items():
        default = getattr(defaults, k)
        if isinstance(v, dict) and dataclasses.is_dataclass(default):
            v = _build(type(default), v)
        elif isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def from_dict(values: dict) -> ExperimentConfig:
    base = to_dict(ExperimentConfig())
    merged = _deep_merge(base, values)
    return _build(ExperimentConfig, merged)


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_dotted(target: dict, key: str, value) -> None:
    parts = key.split(".")
    node = target
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key!r} does not address a config section")
    node[parts[-1]] = value


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(lines) -> dict:
    """``section.key=value`` lines into a nested dict; values are read as JSON when possible."""
    out: dict = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        _set_dotted(out, key.strip(), _parse_value(value))
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                values = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad JSON config: {exc}") from exc
        else:
            values = parse_overrides(text.splitlines())
    if overrides:
        values = _deep_merge(values, parse_overrides(overrides))
    return from_dict(values)


def replace(cfg: ExperimentConfig, **dotted) -> ExperimentConfig:
    """Copy with dotted-key overrides, e.g. ``replace(cfg, **{"student.use_hsi": False})``."""
    nested: dict = {}
    for k, v in dotted.items():
        _set_dotted(nested, k, v)
    return _build(ExperimentConfig, _deep_merge(to_dict(cfg), nested))


def config_hash(cfg) -> str:
    """Short sha256 of the canonical JSON form of a config (dataclass or plain dict)."""
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_config(cfg, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
