"""MDP building blocks: actions, observations, states, padded trajectories.

Concatenation is done at message granularity: a state is the initial prompt
plus an ordered tuple of (action, observation) steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, NamedTuple, Sequence

NULL_TOOL = "<null>"
FINISH_TOOL = "finish"


class ActionKind(str, Enum):
    COMMAND = "command"
    FILE_VIEW = "file_view"
    FILE_EDIT = "file_edit"
    CREATE_FILE = "create_file"
    RUN_SCRIPT = "run_script"
    FINISH = "finish"
    NULL = "null"


class ErrorTag(str, Enum):
    PATH_NOT_FOUND = "path_not_found"
    INVALID_VIEW_RANGE = "invalid_view_range"
    REPLACE_FAILED = "replace_failed"
    OTHER_ERROR = "other_error"


class HorizonError(ValueError):
    """Raised when a step list does not fit in the horizon."""


class TransitionError(ValueError):
    """Raised when a transition would break the trajectory invariants."""


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    raw_text: str
    tool_name: str
    arguments: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ActionKind):
            object.__setattr__(self, "kind", ActionKind(self.kind))
        if isinstance(self.arguments, dict):
            object.__setattr__(self, "arguments", tuple(self.arguments.items()))
        is_null = self.kind is ActionKind.NULL
        if is_null != (self.raw_text == "" and self.tool_name == NULL_TOOL):
            raise ValueError("null action must have empty text and the null tool name")
        if self.kind is ActionKind.FINISH and any(k != "summary" for k, _ in self.arguments):
            raise ValueError("finish carries at most a summary argument")

    @property
    def is_null(self) -> bool:
        return self.kind is ActionKind.NULL

    @property
    def args(self) -> dict[str, str]:
        return dict(self.arguments)

    def arg(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.arguments:
            if k == key:
                return v
        return default

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "raw_text": self.raw_text,
            "tool_name": self.tool_name,
            "arguments": dict(self.arguments),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Action:
        return cls(
            kind=ActionKind(data["kind"]),
            raw_text=data["raw_text"],
            tool_name=data["tool_name"],
            arguments=tuple((str(k), str(v)) for k, v in data["arguments"].items()),
        )


@dataclass(frozen=True)
class Observation:
    raw_text: str
    is_null: bool = False
    error_tag: ErrorTag | None = None

    def __post_init__(self) -> None:
        if self.error_tag is not None and not isinstance(self.error_tag, ErrorTag):
            object.__setattr__(self, "error_tag", ErrorTag(self.error_tag))
        if self.is_null != (self.raw_text == "" and self.error_tag is None):
            raise ValueError("observation is null iff it has no text and no error tag")

    def to_dict(self) -> dict[str, Any]:
        return {
            "raw_text": self.raw_text,
            "is_null": self.is_null,
            "error_tag": self.error_tag.value if self.error_tag else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Observation:
        tag = data.get("error_tag")
        return cls(data["raw_text"], bool(data["is_null"]), ErrorTag(tag) if tag else None)


NULL_ACTION = Action(ActionKind.NULL, "", NULL_TOOL)
NULL_OBSERVATION = Observation("", is_null=True)
# No feedback is defined for finish; a fixed non-empty acknowledgement keeps it distinct from padding.
FINISH_OBSERVATION = Observation("The task has been marked as finished.")


class Step(NamedTuple):
    action: Action
    observation: Observation

    @property
    def is_null(self) -> bool:
        return self.action.is_null

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.to_dict(), "observation": self.observation.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Step:
        return cls(Action.from_dict(data["action"]), Observation.from_dict(data["observation"]))


NULL_STEP = Step(NULL_ACTION, NULL_OBSERVATION)


@dataclass(frozen=True)
class State:
    """The agent's full context: initial prompt and every step so far."""

    task_id: str
    initial_prompt: str
    history: tuple[Step, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(Step(*s) for s in self.history))

    @property
    def t(self) -> int:
        """1-based index of the next step; a state with t-1 steps lives in S_t."""
        return len(self.history) + 1

    @property
    def finished(self) -> bool:
        return any(s.action.kind is ActionKind.FINISH for s in self.history)

    def extend(self, steps: Iterable[Step]) -> State:
        state = self
        for action, observation in steps:
            state = transition(state, action, observation)
        return state


def transition(state: State, action: Action, observation: Observation) -> State:
    """Return a new state with (action, observation) appended."""
    if action.is_null or observation.is_null:
        raise TransitionError("null steps are added by padding, not by transitions")
    if state.finished:
        raise TransitionError("cannot act after a finish action")
    return replace(state, history=state.history + (Step(action, observation),))


def is_terminal(state: State, T: int) -> bool:
    if not state.history:
        return T <= 0
    return len(state.history) >= T or state.history[-1].action.kind is ActionKind.FINISH


def pad_to_horizon(partial: Sequence[Step], T: int) -> tuple[Step, ...]:
    """Pad a step list with null steps up to exactly ``T`` entries.

    Already padded input is returned unchanged (padding is idempotent).
    """
    if T < 1:
        raise ValueError(f"horizon must be positive, got {T}")
    steps = tuple(Step(*s) for s in partial)
    if len(steps) > T:
        raise HorizonError(f"{len(steps)} steps exceed horizon T={T}")
    real = _real_prefix_length(steps)
    for i, s in enumerate(steps):
        if s.action.kind is ActionKind.FINISH and i != real - 1:
            raise TransitionError("finish must be the last real step")
    return steps + (NULL_STEP,) * (T - len(steps))


def _real_prefix_length(steps: Sequence[Step]) -> int:
    real = 0
    for s in steps:
        if s.is_null:
            break
        real += 1
    if any(not s.is_null for s in steps[real:]):
        raise TransitionError("null steps must form a contiguous suffix")
    return real


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    initial_prompt: str
    steps: tuple[Step, ...]
    real_length: int
    terminal_reward: int | None = None
    provenance: dict[str, Any] = field(default_factory=dict, compare=True)

    def __post_init__(self) -> None:
        steps = tuple(Step(*s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if _real_prefix_length(steps) != self.real_length:
            raise ValueError("real_length does not match the non-null prefix")
        for i, s in enumerate(steps):
            if s.action.kind is ActionKind.FINISH and i != self.real_length - 1:
                raise ValueError("finish must be the last non-null step")
        if self.terminal_reward not in (None, 0, 1):
            raise ValueError(f"terminal reward must be 0 or 1, got {self.terminal_reward!r}")

    @classmethod
    def from_state(
        cls,
        state: State,
        T: int,
        terminal_reward: int | None = None,
        provenance: dict[str, Any] | None = None,
    ) -> Trajectory:
        return cls(
            task_id=state.task_id,
            initial_prompt=state.initial_prompt,
            steps=pad_to_horizon(state.history, T),
            real_length=len(state.history),
            terminal_reward=terminal_reward,
            provenance=provenance or {},
        )

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def real_steps(self) -> tuple[Step, ...]:
        return self.steps[: self.real_length]

    def final_state(self) -> State:
        return State(self.task_id, self.initial_prompt, self.real_steps)

    def with_reward(self, reward: int | None) -> Trajectory:
        return replace(self, terminal_reward=reward)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "initial_prompt": self.initial_prompt,
            "steps": [s.to_dict() for s in self.steps],
            "real_length": self.real_length,
            "terminal_reward": self.terminal_reward,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Trajectory:
        return cls(
            task_id=data["task_id"],
            initial_prompt=data["initial_prompt"],
            steps=tuple(Step.from_dict(s) for s in data["steps"]),
            real_length=int(data["real_length"]),
            terminal_reward=data["terminal_reward"],
            provenance=data.get("provenance") or {},
        )

    def to_json(self) -> str:
        return dumps_record(self.to_dict())

    @classmethod
    def from_json(cls, line: str) -> Trajectory:
        return cls.from_dict(json.loads(line))


def dumps_record(record: dict[str, Any]) -> str:
    """One JSON line; key order is the insertion order so output is byte-stable."""
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))
