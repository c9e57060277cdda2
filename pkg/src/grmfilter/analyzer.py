"""Behavior, error and turn-count statistics over trajectory corpora.

Null padding never counts: every numerator and denominator is taken over
real steps only, so metrics are the same before and after padding.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from .core import ActionKind, ErrorTag, Step, Trajectory

logger = logging.getLogger(__name__)

BEHAVIORS = ("created_test", "created_repro", "ran_test", "ran_repro")
# priority order: the first matching category wins
ERROR_CATEGORIES = (
    ErrorTag.PATH_NOT_FOUND.value,
    ErrorTag.INVALID_VIEW_RANGE.value,
    ErrorTag.REPLACE_FAILED.value,
)
FIELDS = ("path", "command", "any")


@dataclass(frozen=True)
class BehaviorRule:
    kinds: frozenset[ActionKind]
    field: str
    pattern: re.Pattern[str]

    def matches(self, step: Step) -> bool:
        action = step.action
        if action.kind not in self.kinds:
            return False
        if self.field == "any":
            text = "\n".join([action.raw_text, *action.args.values()])
        else:
            text = action.arg(self.field) or ""
        return bool(self.pattern.search(text))


@dataclass(frozen=True)
class BehaviorFlags:
    created_test: bool = False
    created_repro: bool = False
    ran_test: bool = False
    ran_repro: bool = False

    def to_dict(self) -> dict[str, bool]:
        return {b: getattr(self, b) for b in BEHAVIORS}


@dataclass(frozen=True)
class PatternRegistry:
    behaviors: dict[str, tuple[BehaviorRule, ...]]
    errors: dict[str, tuple[re.Pattern[str], ...]]

    def __post_init__(self) -> None:
        missing = [b for b in BEHAVIORS if not self.behaviors.get(b)]
        missing += [c for c in ERROR_CATEGORIES if not self.errors.get(c)]
        if missing:
            raise ValueError(f"pattern classes must be nonempty: {', '.join(missing)}")
        extra = (set(self.behaviors) - set(BEHAVIORS)) | (set(self.errors) - set(ERROR_CATEGORIES))
        if extra:
            raise ValueError(f"unknown pattern classes: {', '.join(sorted(extra))}")


def _compile(pattern: str, where: str) -> re.Pattern[str]:
    try:
        return re.compile(pattern, re.IGNORECASE)
    except re.error as exc:
        raise ValueError(f"{where}: bad regex {pattern!r}: {exc}") from exc


def load_registry(document: str | Path | dict[str, Any] | None = None) -> PatternRegistry:
    """Parse a registry document; ``None`` loads the packaged defaults."""
    if document is None:
        data = yaml.safe_load(
            resources.files("grmfilter").joinpath("assets", "patterns.yaml").read_text(encoding="utf-8")
        )
    elif isinstance(document, dict):
        data = document
    else:
        data = yaml.safe_load(Path(document).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("pattern registry must be a mapping")
    behaviors = {}
    for name, rules in (data.get("behaviors") or {}).items():
        compiled = []
        for i, rule in enumerate(rules or []):
            where = f"behaviors.{name}[{i}]"
            if isinstance(rule, str):
                rule = {"pattern": rule}
            kinds = rule.get("kinds") or [k.value for k in ActionKind if k is not ActionKind.NULL]
            try:
                kind_set = frozenset(ActionKind(k) for k in kinds)
            except ValueError as exc:
                raise ValueError(f"{where}: {exc}") from exc
            fld = rule.get("field", "any")
            if fld not in FIELDS:
                raise ValueError(f"{where}: field must be one of {', '.join(FIELDS)}")
            compiled.append(BehaviorRule(kind_set, fld, _compile(str(rule["pattern"]), where)))
        behaviors[name] = tuple(compiled)
    errors = {
        name: tuple(_compile(str(p), f"errors.{name}[{i}]") for i, p in enumerate(pats or []))
        for name, pats in (data.get("errors") or {}).items()
    }
    return PatternRegistry(behaviors, errors)


def detect_behaviors(trajectory: Trajectory, registry: PatternRegistry) -> BehaviorFlags:
    steps = trajectory.real_steps
    return BehaviorFlags(
        **{b: any(rule.matches(s) for s in steps for rule in registry.behaviors[b]) for b in BEHAVIORS}
    )


def classify_step(step: Step, registry: PatternRegistry) -> str | None:
    if step.is_null:
        return None
    tag = step.observation.error_tag
    if tag is not None:
        # the environment's tag is exact; other_error is outside the taxonomy
        return tag.value if tag.value in ERROR_CATEGORIES else None
    text = step.observation.raw_text
    for category in ERROR_CATEGORIES:
        if any(p.search(text) for p in registry.errors[category]):
            return category
    return None


def detect_errors(trajectory: Trajectory, registry: PatternRegistry) -> list[str | None]:
    """One optional category per step, padded steps included (always None)."""
    return [classify_step(s, registry) for s in trajectory.steps]


@dataclass(frozen=True)
class CorpusReport:
    trajectories: int
    turns: int
    error_turns: int
    behavior_ratios: dict[str, float]
    task_error_rate: float
    turn_error_rate: float
    average_turns: float
    error_breakdown: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trajectories": self.trajectories,
            "turns": self.turns,
            "error_turns": self.error_turns,
            "behavior_ratios": dict(self.behavior_ratios),
            "task_error_rate": self.task_error_rate,
            "turn_error_rate": self.turn_error_rate,
            "average_turns": self.average_turns,
            "error_breakdown": dict(self.error_breakdown),
        }

    def metrics(self) -> dict[str, float]:
        """Flat metric table in a fixed order."""
        out: dict[str, float] = {f"behavior.{b}": self.behavior_ratios[b] for b in BEHAVIORS}
        out["task_error_rate"] = self.task_error_rate
        out["turn_error_rate"] = self.turn_error_rate
        for c in ERROR_CATEGORIES:
            out[f"turn_rate.{c}"] = self.error_breakdown[c] / self.turns if self.turns else 0.0
        out["average_turns"] = self.average_turns
        out["trajectories"] = float(self.trajectories)
        return out


def corpus_metrics(corpus: Sequence[Trajectory], registry: PatternRegistry) -> CorpusReport:
    if not corpus:
        raise ValueError("corpus is empty")
    behavior_hits = dict.fromkeys(BEHAVIORS, 0)
    breakdown = dict.fromkeys(ERROR_CATEGORIES, 0)
    turns = error_turns = tasks_with_error = 0
    for traj in corpus:
        flags = detect_behaviors(traj, registry)
        for b in BEHAVIORS:
            behavior_hits[b] += getattr(flags, b)
        cats = [c for c in detect_errors(traj, registry) if c is not None]
        for c in cats:
            breakdown[c] += 1
        turns += traj.real_length
        error_turns += len(cats)
        tasks_with_error += bool(cats)
    n = len(corpus)
    return CorpusReport(
        trajectories=n,
        turns=turns,
        error_turns=error_turns,
        behavior_ratios={b: behavior_hits[b] / n for b in BEHAVIORS},
        task_error_rate=tasks_with_error / n,
        turn_error_rate=error_turns / turns if turns else 0.0,
        average_turns=turns / n,
        error_breakdown=breakdown,
    )


@dataclass(frozen=True)
class Comparison:
    names: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def deltas(self, values: Sequence[float]) -> list[float]:
        return [v - values[0] for v in values[1:]]

    def to_dict(self) -> dict[str, Any]:
        metrics = []
        for metric, values in self.rows:
            entry: dict[str, Any] = {"metric": metric, "values": dict(zip(self.names, values))}
            if len(values) > 1:
                entry["deltas"] = dict(zip(self.names[1:], self.deltas(values)))
            metrics.append(entry)
        return {"reports": list(self.names), "reference": self.names[0], "metrics": metrics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        header = ["metric", *self.names, *(f"delta({n})" for n in self.names[1:])]
        body = []
        for metric, values in self.rows:
            cells = [_fmt(v, metric) for v in values]
            cells += [_fmt(d, metric, signed=True) for d in self.deltas(values)]
            body.append([metric, *cells])
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]

        def line(row: list[str]) -> str:
            first = row[0].ljust(widths[0])
            rest = [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            return "  ".join([first, *rest]).rstrip()

        sep = "  ".join("-" * w for w in widths)
        return "\n".join([line(header), sep, *(line(r) for r in body)]) + "\n"


def _fmt(value: float, metric: str, signed: bool = False) -> str:
    if metric == "trajectories":
        return f"{value:+.0f}" if signed else f"{value:.0f}"
    return f"{value:+.3f}" if signed else f"{value:.3f}"


def compare_reports(reports: Sequence[tuple[str, CorpusReport]]) -> Comparison:
    """Side-by-side metrics; deltas are taken against the first report."""
    if not reports:
        raise ValueError("need at least one report")
    names = tuple(name for name, _ in reports)
    if len(set(names)) != len(names):
        raise ValueError("report names must be unique")
    tables = [r.metrics() for _, r in reports]
    rows = tuple((m, tuple(t[m] for t in tables)) for m in tables[0])
    return Comparison(names, rows)
