"""GRM-guided rollouts: plain baseline, turn-level and segment-level filtering."""

from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from .actors import (
    Environment,
    Judge,
    JudgeRequest,
    Policy,
    RewardUnavailable,
    SnapshotHandle,
    candidate_seeds,
    derive_seed,
    execute,
    require_snapshots,
    restore,
    run_steps,
    sample_candidates,
    snapshot,
    terminal_reward,
)
from .core import Action, ActionKind, State, Step, Trajectory, is_terminal, transition
from .rubrics import (
    RubricSet,
    SideInfo,
    VerdictParseError,
    assemble_pair_prompt,
    assemble_turn_prompt,
    parse_pair_verdict,
    parse_turn_verdict,
    run_pairwise_tournament,
    select_turn_winner,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("baseline", "turn_level", "segment_level")


@dataclass(frozen=True)
class RunConfig:
    strategy: str = "turn_level"
    N: int = 3
    L: int = 5
    T: int = 20
    judge_retries: int = 2
    fallback: str = "random"
    branch_workers: int = 1
    allow_missing_patch: bool = False

    def problems(self) -> list[str]:
        """All constraint violations; empty when the config is usable."""
        out = []
        if self.strategy not in STRATEGIES:
            out.append(f"strategy must be one of {', '.join(STRATEGIES)}, got {self.strategy!r}")
        if self.T < 1:
            out.append(f"T must be positive, got {self.T}")
        if self.N < 1:
            out.append(f"N must be positive, got {self.N}")
        elif self.strategy in ("turn_level", "segment_level") and self.N < 2:
            out.append(f"{self.strategy} needs N >= 2, got {self.N}")
        if self.strategy == "segment_level" and not 1 <= self.L <= self.T:
            out.append(f"segment_level needs 1 <= L <= T, got L={self.L}, T={self.T}")
        if self.judge_retries < 0:
            out.append("judge_retries must be non-negative")
        if self.fallback != "random":
            out.append(f"unknown fallback policy {self.fallback!r}")
        if self.branch_workers < 1:
            out.append("branch_workers must be positive")
        return out


@dataclass(frozen=True)
class SegmentCandidate:
    steps: tuple[Step, ...]
    branch_snapshot: SnapshotHandle | None = field(default=None, compare=False, repr=False)
    terminated_early: bool = False

    def __post_init__(self) -> None:
        if self.terminated_early and (
            not self.steps or self.steps[-1].action.kind is not ActionKind.FINISH
        ):
            raise ValueError("an early-terminated segment must end with finish")


def partition_horizon(T: int, L: int) -> list[int]:
    """Block lengths min(L, T - bL) for b = 0 .. ceil(T/L) - 1."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    if not 1 <= L <= T:
        raise ValueError(f"need 1 <= L <= T, got L={L}, T={T}")
    return [min(L, T - b * L) for b in range(math.ceil(T / L))]


def accept(trajectory: Trajectory) -> bool:
    if trajectory.terminal_reward is None:
        raise ValueError(f"trajectory for {trajectory.task_id} has no terminal reward")
    return trajectory.terminal_reward == 1


def _provenance(cfg: RunConfig, strategy: str, seed: int) -> dict[str, Any]:
    prov: dict[str, Any] = {"strategy": strategy, "N": cfg.N, "T": cfg.T}
    if strategy == "segment_level":
        prov["L"] = cfg.L
    prov.update(seed=seed, fallbacks=0, verdicts=[])
    return prov


def _finalize(state: State, env: Environment, T: int, provenance: dict[str, Any]) -> Trajectory:
    trajectory = Trajectory.from_state(state, T, provenance=provenance)
    try:
        outcome = terminal_reward(env, trajectory)
    except RewardUnavailable as exc:
        logger.warning("reward unavailable for %s: %s", state.task_id, exc)
        provenance["unevaluated"] = str(exc)
        return trajectory
    provenance["reward_detail"] = outcome.detail
    return trajectory.with_reward(outcome.value)


def rollout_baseline(
    initial: State, policy: Policy, env: Environment, cfg: RunConfig, seed: int
) -> Trajectory:
    """Plain policy rollout; the rejection-sampling baseline."""
    state = initial
    prov = _provenance(cfg, "baseline", seed)
    while not is_terminal(state, cfg.T):
        (action,) = sample_candidates(policy, state, 1, candidate_seeds(seed, state.t, 1))
        state = transition(state, action, execute(env, state, action))
    return _finalize(state, env, cfg.T, prov)


def judge_turn(
    judge: Judge,
    state: State,
    candidates: Sequence[Action],
    side: SideInfo,
    rubrics: RubricSet,
    cfg: RunConfig,
    seed: int,
) -> tuple[int, dict[str, Any]]:
    """Ask the GRM to pick one of ``candidates`` (0-based index + verdict record).

    The request carries unexecuted actions only. Unparseable or out-of-range
    verdicts are retried; once retries run out a seeded uniform pick is used
    and flagged as a fallback.
    """
    n = len(candidates)
    record: dict[str, Any] = {"step": state.t, "candidates": [a.raw_text for a in candidates]}
    if n == 1:
        record.update(winner=0, judge_calls=0, fallback=False)
        return 0, record
    prompt = assemble_turn_prompt(state, candidates, side, rubrics, cfg.allow_missing_patch)
    request = JudgeRequest("turn", prompt, state, tuple(candidates), {"step": state.t})
    errors = []
    for attempt in range(cfg.judge_retries + 1):
        raw = judge(request)
        try:
            verdict = parse_turn_verdict(raw, n, rubrics.weights)
        except VerdictParseError as exc:
            errors.append(str(exc))
            continue
        record.update(
            winner=verdict.winner,
            judge_calls=attempt + 1,
            fallback=False,
            scores=[list(s) if s is not None else None for s in verdict.scores],
            totals=list(verdict.totals),
            raw=raw,
        )
        if errors:
            record["parse_errors"] = errors
        if all(t is not None for t in verdict.totals):
            implied = select_turn_winner(verdict.totals)  # type: ignore[arg-type]
            if verdict.totals[implied] != verdict.totals[verdict.winner]:
                logger.info("step %d: judge totals favour %d but conclusion names %d",
                            state.t, implied + 1, verdict.winner_index)
                record["totals_disagree"] = True
        return verdict.winner, record
    winner = random.Random(derive_seed(seed, "turn-fallback", state.t)).randrange(n)
    logger.warning("step %d: no usable verdict after %d calls, seeded pick %d",
                   state.t, cfg.judge_retries + 1, winner)
    record.update(winner=winner, judge_calls=cfg.judge_retries + 1, fallback=True, parse_errors=errors)
    return winner, record


def rollout_turn_level(
    initial: State,
    policy: Policy,
    env: Environment,
    judge: Judge,
    rubrics: RubricSet,
    side: SideInfo,
    cfg: RunConfig,
    seed: int,
) -> Trajectory:
    """At every step draw N actions from the same state, let the GRM pick one
    before anything is executed, then execute only the pick."""
    state = initial
    prov = _provenance(cfg, "turn_level", seed)
    while not is_terminal(state, cfg.T):
        candidates = sample_candidates(policy, state, cfg.N, candidate_seeds(seed, state.t, cfg.N))
        winner, record = judge_turn(judge, state, candidates, side, rubrics, cfg, seed)
        prov["verdicts"].append(record)
        prov["fallbacks"] += bool(record["fallback"])
        action = candidates[winner]
        state = transition(state, action, execute(env, state, action))
    return _finalize(state, env, cfg.T, prov)


def _roll_branch(
    policy: Policy,
    env: Environment,
    state: State,
    length: int,
    seed: int,
    branch: str,
) -> tuple[SegmentCandidate, Environment]:
    steps: list[Step] = []
    for _ in range(length):
        (action,) = sample_candidates(policy, state, 1, candidate_seeds(seed, state.t, 1, branch))
        obs = execute(env, state, action)
        state = transition(state, action, obs)
        steps.append(Step(action, obs))
        if action.kind is ActionKind.FINISH:
            break
    finished = bool(steps) and steps[-1].action.kind is ActionKind.FINISH
    handle = env.snapshot() if getattr(env, "supports_snapshot", False) else None
    return SegmentCandidate(tuple(steps), handle, finished), env


def judge_pair(
    judge: Judge,
    prefix: State,
    first: SegmentCandidate,
    second: SegmentCandidate,
    side: SideInfo,
    rubrics: RubricSet,
    cfg: RunConfig,
    fallback_seed: int,
    meta: dict[str, Any],
) -> tuple[bool, dict[str, Any]]:
    prompt = assemble_pair_prompt(prefix, first, second, side, rubrics, cfg.allow_missing_patch)
    request = JudgeRequest("pair", prompt, prefix, (first.steps, second.steps), meta)
    errors = []
    for attempt in range(cfg.judge_retries + 1):
        raw = judge(request)
        try:
            verdict = parse_pair_verdict(raw)
        except VerdictParseError as exc:
            errors.append(str(exc))
            continue
        record = {"first_wins": verdict.first_wins, "judge_calls": attempt + 1, "fallback": False, "raw": raw}
        if errors:
            record["parse_errors"] = errors
        return verdict.first_wins, record
    first_wins = random.Random(fallback_seed).random() < 0.5
    logger.warning("pair %s: no usable verdict, seeded outcome", meta)
    return first_wins, {
        "first_wins": first_wins,
        "judge_calls": cfg.judge_retries + 1,
        "fallback": True,
        "parse_errors": errors,
    }


def rollout_segment_level(
    initial: State,
    policy: Policy,
    env: Environment,
    judge: Judge,
    rubrics: RubricSet,
    side: SideInfo,
    cfg: RunConfig,
    seed: int,
) -> Trajectory:
    """Branch N executed continuations per block and keep one.

    Non-final blocks are decided by a pairwise GRM tournament. The final
    block needs no judge: every branch is run to the horizon (or finish) and
    the one with the highest terminal reward wins, seeded-random if all are 0.
    """
    require_snapshots(env)
    blocks = partition_horizon(cfg.T, cfg.L)
    state = initial
    mainline = env
    prov = _provenance(cfg, "segment_level", seed)
    pool = ThreadPoolExecutor(cfg.branch_workers) if cfg.branch_workers > 1 else None
    try:
        for b, length in enumerate(blocks):
            if is_terminal(state, cfg.T):
                break
            final = b == len(blocks) - 1
            handle = snapshot(mainline)

            def branch(n: int, b: int = b, length: int = length) -> tuple[SegmentCandidate, Environment]:
                return _roll_branch(policy, restore(mainline, handle), state, length, seed, f"{b}.{n}")

            if pool is None:
                rolled = [branch(n) for n in range(cfg.N)]
            else:
                rolled = list(pool.map(branch, range(cfg.N)))
            candidates = [c for c, _ in rolled]
            record: dict[str, Any] = {
                "block": b,
                "start_step": state.t,
                "candidates": [[s.action.raw_text for s in c.steps] for c in candidates],
            }
            if final:
                chosen = _select_by_reward(candidates, [e for _, e in rolled], state, cfg, seed, b, record)
            else:
                chosen = _select_by_tournament(
                    candidates, state, judge, side, rubrics, cfg, seed, b, record, pool
                )
                prov["fallbacks"] += sum(m["fallback"] for m in record["matches"])
            record["winner"] = chosen
            prov["verdicts"].append(record)

            selected, selected_env = rolled[chosen]
            if mainline.deterministic:
                adopted = selected.steps
                new_mainline = selected_env
            else:
                adopted = tuple(run_steps(mainline, state, [s.action for s in selected.steps]))
                record["diverged"] = [s.observation for s in adopted] != [
                    s.observation for s in selected.steps
                ]
                new_mainline = mainline
            for n, (_, branch_env) in enumerate(rolled):
                if branch_env is not new_mainline:
                    branch_env.close()
            if mainline is not env and mainline is not new_mainline:
                mainline.close()
            mainline = new_mainline
            state = state.extend(adopted)
            if selected.terminated_early:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return _finalize(state, mainline, cfg.T, prov)


def _select_by_reward(
    candidates: list[SegmentCandidate],
    envs: list[Environment],
    state: State,
    cfg: RunConfig,
    seed: int,
    block: int,
    record: dict[str, Any],
) -> int:
    rewards = []
    for cand, branch_env in zip(candidates, envs):
        traj = Trajectory.from_state(state.extend(cand.steps), cfg.T)
        try:
            rewards.append(terminal_reward(branch_env, traj).value)
        except RewardUnavailable as exc:
            logger.warning("branch reward unavailable: %s", exc)
            rewards.append(0)
    record.update(mode="reward", rewards=rewards, judge_calls=0)
    if max(rewards) == 0:
        record["random_pick"] = True
        return random.Random(derive_seed(seed, "final-block", block)).randrange(len(candidates))
    record["random_pick"] = False
    return rewards.index(max(rewards))


def _select_by_tournament(
    candidates: list[SegmentCandidate],
    state: State,
    judge: Judge,
    side: SideInfo,
    rubrics: RubricSet,
    cfg: RunConfig,
    seed: int,
    block: int,
    record: dict[str, Any],
    pool: ThreadPoolExecutor | None,
) -> int:
    details: dict[tuple[int, int], dict[str, Any]] = {}

    def pair(first: int, second: int) -> bool:
        meta = {"block": block, "first_index": first, "second_index": second}
        outcome, detail = judge_pair(
            judge, state, candidates[first], candidates[second], side, rubrics, cfg,
            derive_seed(seed, "pair-fallback", block, first, second), meta,
        )
        details[(first, second)] = detail
        return outcome

    matches: list[dict[str, Any]] = []
    winner = run_pairwise_tournament(
        candidates, pair, seed=derive_seed(seed, "tournament", block), records=matches, executor=pool
    )
    for m in matches:
        m.update(details[(m["first"], m["second"])])
    wins = [0] * len(candidates)
    for m in matches:
        wins[m["winner"]] += 1
    record.update(mode="tournament", matches=matches, wins=wins,
                  judge_calls=sum(m["judge_calls"] for m in matches))
    return winner


def rollout(
    initial: State,
    policy: Policy,
    env: Environment,
    judge: Judge | None,
    rubrics: RubricSet | None,
    side: SideInfo | None,
    cfg: RunConfig,
    seed: int,
) -> Trajectory:
    if cfg.strategy == "baseline":
        return rollout_baseline(initial, policy, env, cfg, seed)
    if judge is None or rubrics is None or side is None:
        raise ValueError(f"{cfg.strategy} needs a judge, rubrics and side info")
    if cfg.strategy == "turn_level":
        return rollout_turn_level(initial, policy, env, judge, rubrics, side, cfg, seed)
    if cfg.strategy == "segment_level":
        return rollout_segment_level(initial, policy, env, judge, rubrics, side, cfg, seed)
    raise ValueError(f"unknown strategy {cfg.strategy!r}")
