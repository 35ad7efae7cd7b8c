"""Run configuration: every knob has an explicit default, and dumping the
effective config reproduces all of them (no hidden defaults)."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .evolution import EvolutionConfig

CONFIG_ENV = "GEOSKILL_CONFIG"

DEFAULT_TASK_PRIOR = (
    "Locate the photographed place coarse-to-fine: establish the global "
    "region first, then narrow to a country, then refine locally. Prefer "
    "cues that are visible in the scene over prior beliefs, and say which "
    "cue supports each step."
)


class ConfigError(ValueError):
    """Invalid configuration value or unreadable config file."""


@dataclass
class BackendConfig:
    url: str | None = None
    model_name: str = ""
    timeout_s: float = 30.0
    max_retries: int = 2
    script: str | None = None  # path to a mock script; takes priority over url
    rate_per_s: float | None = None


@dataclass
class BackendsConfig:
    online: BackendConfig = field(default_factory=BackendConfig)
    offline: BackendConfig = field(default_factory=BackendConfig)


@dataclass
class RetrievalConfig:
    k: int = 7
    score_threshold: float = 0.05
    diversity_lambda: float = 0.7
    lexical_weight: float = 0.5
    semantic_weight: float = 0.5
    task_prior_weight: float = 0.4
    scene_weight: float = 0.6
    bm25_k1: float = 1.5
    bm25_b: float = 0.75
    embedding_dim: int = 256
    embedding_url: str | None = None  # remote provider; None = hashed fallback

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("retrieval.k must be >= 1")
        if not (0.0 <= self.diversity_lambda <= 1.0):
            raise ConfigError("retrieval.diversity_lambda must be in [0, 1]")
        if self.embedding_dim < 1:
            raise ConfigError("retrieval.embedding_dim must be >= 1")
        if self.lexical_weight + self.semantic_weight <= 0:
            raise ConfigError("retrieval weights must have a positive sum")


@dataclass
class InferenceConfig:
    main_temperature: float = 0.2
    vote_base_temperature: float = 0.1
    vote_temperature_step: float = 0.05
    rollouts: int = 1
    mode: str = "full"
    seed: int = 0
    success_radius_km: float = 25.0
    task_prior: str = DEFAULT_TASK_PRIOR

    def validate(self) -> None:
        if self.rollouts < 1:
            raise ConfigError("inference.rollouts must be >= 1")
        if not (0.0 <= self.main_temperature <= 2.0):
            raise ConfigError("inference.main_temperature must be in [0, 2]")
        if self.mode not in ("full", "wo_skill", "random_skill", "shuffled_order", "atomic_only"):
            raise ConfigError(f"unknown inference.mode: {self.mode!r}")


@dataclass
class RunConfig:
    library_dir: str = "library"
    backend: BackendsConfig = field(default_factory=BackendsConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    records_log: str = "records.jsonl"
    evolution_history: str = "evolution_history.jsonl"
    checkpoint_every: int = 50
    parallelism: int = 1
    fixed_clock: float | None = None  # pin record timestamps for reproducible runs

    def validate(self) -> None:
        self.retrieval.validate()
        self.inference.validate()
        self.evolution.validate()
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "backend": BackendsConfig,
    "retrieval": RetrievalConfig,
    "inference": InferenceConfig,
    "evolution": EvolutionConfig,
}


def _build_section(cls, data: Mapping[str, Any], path: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"config section {path!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys under {path}: {sorted(unknown)}")
    if cls is BackendsConfig:
        kwargs = {
            key: _build_section(BackendConfig, value, f"{path}.{key}")
            for key, value in data.items()
        }
        return cls(**kwargs)
    return cls(**data)


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = value
    config = RunConfig(**kwargs)
    try:
        config.validate()
    except (TypeError, ValueError) as exc:
        # Wrong-typed values surface as comparison failures during range checks.
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc
    return config


def _apply_override(data: dict, dotted: str, raw_value: str) -> None:
    keys = dotted.split(".")
    cursor = data
    for key in keys[:-1]:
        cursor = cursor.setdefault(key, {})
        if not isinstance(cursor, dict):
            raise ConfigError(f"cannot override through non-object key {key!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value  # bare strings are allowed unquoted
    cursor[keys[-1]] = value


def load_config(
    path: str | Path | None = None,
    overrides: tuple[str, ...] = (),
) -> RunConfig:
    """Load a JSON config file (or defaults), applying ``key=value``
    overrides with dotted paths, e.g. ``retrieval.k=5``."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a JSON object")
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override must look like key=value: {override!r}")
        dotted, raw_value = override.split("=", 1)
        _apply_override(data, dotted.strip(), raw_value.strip())
    return config_from_dict(data)
