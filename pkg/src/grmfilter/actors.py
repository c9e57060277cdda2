"""Contracts for the policy, the environment and the GRM judge.

Concrete backends live in :mod:`grmfilter.simenv` (scripted simulator and
oracle judge) and :mod:`grmfilter.gateway` (remote chat-completion models).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence, runtime_checkable

from .core import (
    FINISH_OBSERVATION,
    Action,
    ActionKind,
    Observation,
    State,
    Step,
    Trajectory,
    is_terminal,
)

logger = logging.getLogger(__name__)


class RolloutAborted(RuntimeError):
    """A backend failed for good; the task is skipped, never half-written."""


class CapabilityError(RuntimeError):
    """The environment cannot do what the configured strategy needs."""


class StaleSnapshotError(RuntimeError):
    """Restore attempted from a snapshot whose owning environment was disposed."""


class RewardUnavailable(RuntimeError):
    """The reward harness failed; the trajectory stays unevaluated."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    max_tokens: int = 4096
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class RewardOutcome:
    value: int
    detail: str = ""

    def __post_init__(self) -> None:
        if self.value not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.value!r}")


@dataclass(frozen=True)
class JudgeRequest:
    """A single GRM call: the assembled prompt plus a structured side channel.

    Remote judges read ``prompt``; the simulator's oracle reads the structure.
    ``candidates`` holds Actions for turn-level requests and two step tuples
    (first, second) for pair requests.
    """

    kind: str  # "turn" | "pair"
    prompt: str
    state: State
    candidates: tuple[Any, ...]
    meta: dict[str, Any] = field(default_factory=dict)


@runtime_checkable
class Policy(Protocol):
    def sample(self, state: State, seeds: Sequence[int]) -> list[Action]:
        """Draw one action per seed, each draw independent of the others."""
        ...


@runtime_checkable
class SnapshotHandle(Protocol):
    @property
    def valid(self) -> bool: ...


@runtime_checkable
class Environment(Protocol):
    deterministic: bool
    supports_snapshot: bool

    def execute(self, action: Action) -> Observation: ...

    def snapshot(self) -> SnapshotHandle: ...

    def restore(self, handle: SnapshotHandle) -> Environment: ...

    def reward(self, trajectory: Trajectory) -> RewardOutcome: ...

    def close(self) -> None: ...


class Judge(Protocol):
    def __call__(self, request: JudgeRequest) -> str: ...


def derive_seed(*parts: Any) -> int:
    """Deterministic 63-bit child seed from a path of parts.

    Uses sha256 over the '/'-joined parts, so seeds are stable across
    processes and independent of scheduling order.
    """
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def candidate_seeds(root: int, step: int, n: int, branch: int | None = None) -> list[int]:
    """Seeds for the ``n`` candidates drawn at absolute step ``step``.

    Candidate 0 of the mainline uses the same seed as the plain rollout, so a
    single-candidate filter reproduces the baseline exactly.
    """
    if branch is None:
        return [derive_seed(root, "step", step, i) for i in range(n)]
    return [derive_seed(root, "branch", branch, "step", step, i) for i in range(n)]


def sample_candidates(policy: Policy, state: State, N: int, seeds: Sequence[int]) -> list[Action]:
    if N < 1:
        raise ValueError("N must be at least 1")
    if len(seeds) != N:
        raise ValueError(f"need {N} seeds, got {len(seeds)}")
    if state.finished:
        raise ValueError("cannot sample from a terminal state")
    actions = list(policy.sample(state, seeds))
    if len(actions) != N:
        raise RolloutAborted(f"policy returned {len(actions)} candidates, expected {N}")
    return actions


def execute(env: Environment, state: State, action: Action, T: int | None = None) -> Observation:
    if state.finished or (T is not None and is_terminal(state, T)):
        raise ValueError("cannot execute from a terminal state")
    if action.kind is ActionKind.FINISH:
        return FINISH_OBSERVATION
    try:
        return env.execute(action)
    except (RolloutAborted, CapabilityError):
        raise
    except Exception as exc:  # environment crash
        raise RolloutAborted(f"environment crashed on {action.tool_name}: {exc}") from exc


def snapshot(env: Environment) -> SnapshotHandle:
    require_snapshots(env)
    return env.snapshot()


def restore(env: Environment, handle: SnapshotHandle) -> Environment:
    require_snapshots(env)
    if not handle.valid:
        raise StaleSnapshotError("snapshot handle is no longer valid")
    return env.restore(handle)


def require_snapshots(env: Environment) -> None:
    if not getattr(env, "supports_snapshot", False):
        raise CapabilityError(f"{type(env).__name__} does not support snapshots")


def terminal_reward(env: Environment, trajectory: Trajectory) -> RewardOutcome:
    try:
        outcome = env.reward(trajectory)
    except RewardUnavailable:
        raise
    except Exception as exc:
        raise RewardUnavailable(f"reward harness failed: {exc}") from exc
    if not isinstance(outcome, RewardOutcome):
        outcome = RewardOutcome(int(outcome))
    return outcome


def run_steps(env: Environment, state: State, actions: Sequence[Action]) -> list[Step]:
    """Execute actions in order on ``env`` and return the resulting steps."""
    steps = []
    for action in actions:
        obs = execute(env, state, action)
        state = state.extend([(action, obs)])
        steps.append(Step(action, obs))
    return steps
