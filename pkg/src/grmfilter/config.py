"""Run configuration files: YAML in, validated dataclasses out.

Overrides are flat ``dotted.key=value`` strings applied after the file is
parsed, last one wins. Values go through the YAML scalar parser, so
``N=4`` is an int and ``allow_missing_patch=true`` a bool.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from .filtering import RunConfig
from .rubrics import RubricConfigError, RubricSet, default_rubrics, load_rubrics
from .simenv import DEFAULT_NOISE, ScriptedPolicyConfig

logger = logging.getLogger(__name__)

ACTOR_KINDS = ("sim", "gateway")


class ConfigError(ValueError):
    """Every problem found in a config, not just the first."""

    def __init__(self, problems: Sequence[str]) -> None:
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass(frozen=True)
class SimSettings:
    competence: float = 0.6
    noise: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    snapshots: bool = True

    def policy_config(self, seed: int) -> ScriptedPolicyConfig:
        return ScriptedPolicyConfig(self.competence, dict(self.noise), seed)


@dataclass(frozen=True)
class GatewaySettings:
    base_url: str = "http://localhost:8000/v1"
    policy_model: str = "policy"
    judge_model: str = "judge"
    api_key_env: str = "GRMFILTER_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    temperature: float = 1.0
    judge_temperature: float = 0.0
    max_tokens: int = 4096


@dataclass(frozen=True)
class AppConfig:
    strategy: str = "turn_level"
    N: int = 3
    L: int = 5
    T: int = 20
    seed: int | None = None
    judge_retries: int = 2
    fallback: str = "random"
    branch_workers: int = 1
    workers: int = 1
    allow_missing_patch: bool = False
    cap: int = 500
    max_passes: int = 1
    trials: int = 5
    actor: str = "sim"
    tasks: str | None = None
    output_dir: str | None = None
    rubrics: str | None = None
    patterns: str | None = None
    sim: SimSettings = field(default_factory=SimSettings)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)

    def run_config(self) -> RunConfig:
        return RunConfig(
            strategy=self.strategy,
            N=self.N,
            L=self.L,
            T=self.T,
            judge_retries=self.judge_retries,
            fallback=self.fallback,
            branch_workers=self.branch_workers,
            allow_missing_patch=self.allow_missing_patch,
        )

    def rubric_set(self) -> RubricSet:
        if self.rubrics:
            return load_rubrics(Path(self.rubrics))
        return default_rubrics("segment" if self.strategy == "segment_level" else "turn")

    def with_seed(self, seed: int) -> AppConfig:
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_NESTED = {"sim": SimSettings, "gateway": GatewaySettings}


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    data = _deep_copy(data)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError([f"override {item!r} is not of the form key=value"])
        value = yaml.safe_load(raw) if raw.strip() else None
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return data


def _deep_copy(data: dict[str, Any]) -> dict[str, Any]:
    return {k: _deep_copy(v) if isinstance(v, dict) else v for k, v in data.items()}


def _build(cls: type, data: dict[str, Any], prefix: str, problems: list[str]) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in known:
            problems.append(f"unknown config key {name!r}")
            continue
        if key in _NESTED and cls is AppConfig:
            if value is None:
                continue
            if not isinstance(value, dict):
                problems.append(f"{name} must be a mapping")
                continue
            kwargs[key] = _build(_NESTED[key], value, f"{name}.", problems)
            continue
        expected = known[key].type
        if not _type_ok(value, expected):
            problems.append(f"{name} has wrong type: expected {expected}, got {type(value).__name__}")
            continue
        if expected == "float" and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def _type_ok(value: Any, expected: str) -> bool:
    checks = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "int | None": lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
        "str | None": lambda v: v is None or isinstance(v, str),
        "dict[str, float]": lambda v: isinstance(v, dict),
    }
    check = checks.get(expected)
    return True if check is None else check(value)


def parse_config(data: dict[str, Any] | None, overrides: Sequence[str] = ()) -> AppConfig:
    """Build and validate; raises ConfigError listing all problems."""
    data = apply_overrides(data or {}, overrides)
    problems: list[str] = []
    cfg = _build(AppConfig, data, "", problems)
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> AppConfig:
    data: Any = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file {path} does not exist"])
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError([f"config file {path} must contain a mapping"])
    return parse_config(data, overrides)


def validate(cfg: AppConfig) -> list[str]:
    """Static checks: run constraints, rubric weights, actor capabilities."""
    problems = list(cfg.run_config().problems())
    if cfg.actor not in ACTOR_KINDS:
        problems.append(f"actor must be one of {', '.join(ACTOR_KINDS)}, got {cfg.actor!r}")
    if cfg.cap < 1:
        problems.append(f"cap must be positive, got {cfg.cap}")
    if cfg.max_passes < 1:
        problems.append(f"max_passes must be positive, got {cfg.max_passes}")
    if cfg.trials < 1:
        problems.append(f"trials must be positive, got {cfg.trials}")
    if cfg.workers < 1:
        problems.append(f"workers must be positive, got {cfg.workers}")
    if cfg.strategy == "segment_level" and not cfg.sim.snapshots:
        problems.append("segment_level needs a snapshot-capable environment (sim.snapshots is false)")
    try:
        cfg.sim.policy_config(0)
    except ValueError as exc:
        problems.append(f"sim: {exc}")
    if cfg.gateway.max_retries < 0 or cfg.gateway.timeout <= 0:
        problems.append("gateway: max_retries must be >= 0 and timeout positive")
    try:
        cfg.rubric_set()
    except (RubricConfigError, OSError) as exc:
        problems.append(f"rubrics: {exc}")
    if cfg.patterns:
        from .analyzer import load_registry

        try:
            load_registry(cfg.patterns)
        except (ValueError, OSError) as exc:
            problems.append(f"patterns: {exc}")
    return problems
