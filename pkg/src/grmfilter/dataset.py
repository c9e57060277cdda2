"""Collection pipeline: easy-task pre-filter, capped dataset assembly, persistence.

Output directory layout after ``collect_dataset``::

    accepted.jsonl        finalized accepted trajectories (reward 1 only)
    rejected.jsonl        quarantine: reward 0
    unevaluated.jsonl     quarantine: reward harness failed
    aborted.jsonl         tasks whose rollout was aborted (no trajectory)
    manifest.json         counts, config snapshot, content hash

While the run is in progress the accepted file is ``accepted.jsonl.partial``;
it is renamed only once everything else has been written.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .actors import Environment, Judge, Policy, RolloutAborted, derive_seed
from .config import AppConfig
from .core import State, Trajectory, dumps_record
from .filtering import RunConfig, accept, rollout
from .rubrics import RubricSet, SideInfo
from .simenv import OracleJudge, ScriptedPolicy, SimEnvironment, SimTask, make_task

logger = logging.getLogger(__name__)

ACCEPTED = "accepted.jsonl"
REJECTED = "rejected.jsonl"
UNEVALUATED = "unevaluated.jsonl"
ABORTED = "aborted.jsonl"
MANIFEST = "manifest.json"
PARTIAL_SUFFIX = ".partial"


class DatasetError(ValueError):
    """Malformed task or dataset file."""


class IntegrityError(DatasetError):
    """File content does not match the manifest hash."""


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    task_statement: str
    side: SideInfo
    env: dict[str, Any]
    initial_prompt: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "task_statement": self.task_statement,
            "side": {
                "ground_truth_patch": self.side.ground_truth_patch,
                "task_statement": self.side.task_statement,
                "extra_notes": self.side.extra_notes,
            },
            "env": dict(self.env),
            "initial_prompt": self.initial_prompt,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TaskSpec:
        side = data.get("side") or {}
        return cls(
            task_id=str(data["task_id"]),
            task_statement=str(data["task_statement"]),
            side=SideInfo(
                ground_truth_patch=side.get("ground_truth_patch", ""),
                task_statement=side.get("task_statement", data["task_statement"]),
                extra_notes=side.get("extra_notes"),
            ),
            env=dict(data["env"]),
            initial_prompt=str(data.get("initial_prompt", "")),
        )

    @classmethod
    def from_sim(cls, task: SimTask) -> TaskSpec:
        return cls(
            task_id=task.task_id,
            task_statement=task.statement,
            side=task.side_info(),
            env={"kind": "sim", "seed": task.seed, "difficulty": task.difficulty},
            initial_prompt=task.initial_prompt,
        )

    def sim_task(self) -> SimTask:
        if self.env.get("kind") != "sim":
            raise DatasetError(f"task {self.task_id}: unsupported environment kind {self.env.get('kind')!r}")
        task = make_task(int(self.env["seed"]), int(self.env.get("difficulty", 0)))
        if task.task_id != self.task_id:
            raise DatasetError(f"task {self.task_id}: descriptor generates {task.task_id}")
        return task


def sim_task_specs(n: int, seed: int = 0, max_difficulty: int = 3) -> list[TaskSpec]:
    """``n`` simulator tasks with difficulty cycling through 0..max_difficulty."""
    return [
        TaskSpec.from_sim(make_task(derive_seed(seed, "task", i) % 10**9, i % (max_difficulty + 1)))
        for i in range(n)
    ]


def write_tasks(path: str | Path, tasks: Iterable[TaskSpec]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(dumps_record(t.to_dict()) + "\n")


def read_tasks(path: str | Path) -> list[TaskSpec]:
    tasks, seen = [], set()
    for lineno, record in _read_jsonl(Path(path)):
        try:
            task = TaskSpec.from_dict(record)
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: malformed task record: {exc}") from exc
        if task.task_id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate task_id {task.task_id!r}")
        seen.add(task.task_id)
        tasks.append(task)
    return tasks


# --- actors ---

@dataclass
class Actors:
    policy: Policy
    make_env: Callable[[], Environment]
    judge: Judge | None
    rubrics: RubricSet
    side: SideInfo
    initial_prompt: str


ActorFactory = Callable[[TaskSpec], Actors]


def default_actor_factory(cfg: AppConfig, gateway_client: Any = None) -> ActorFactory:
    """Simulator environment; scripted+oracle or gateway policy and judge."""
    rubrics = cfg.rubric_set()

    def build(spec: TaskSpec) -> Actors:
        task = spec.sim_task()
        if cfg.actor == "gateway":
            from .gateway import GatewayJudge, GatewayPolicy

            policy: Policy = GatewayPolicy(gateway_client)
            judge: Judge = GatewayJudge(gateway_client)
        else:
            policy = ScriptedPolicy(task, cfg.sim.policy_config(cfg.seed or 0))
            judge = OracleJudge(task, rubrics)
        return Actors(
            policy=policy,
            make_env=lambda: SimEnvironment(task, supports_snapshot=cfg.sim.snapshots),
            judge=judge,
            rubrics=rubrics,
            side=spec.side,
            initial_prompt=spec.initial_prompt or task.initial_prompt,
        )

    return build


# --- easy-task filter ---

def filter_easy_tasks(
    tasks: Sequence[TaskSpec],
    factory: ActorFactory,
    T: int,
    seed: int,
    trials: int = 5,
    workers: int = 1,
) -> tuple[list[TaskSpec], list[dict[str, Any]]]:
    """Drop tasks solved in every one of ``trials`` independent baseline rollouts.

    Returns the survivors and one log record per task. A task whose rollout
    aborts is kept and marked ``unevaluated-kept``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = RunConfig(strategy="baseline", N=1, T=T)

    def trial_outcomes(spec: TaskSpec) -> dict[str, Any]:
        rewards: list[int | None] = []
        actors = factory(spec)
        initial = State(spec.task_id, actors.initial_prompt)
        for k in range(trials):
            env = actors.make_env()
            try:
                traj = rollout(initial, actors.policy, env, None, None, None, cfg,
                               derive_seed(seed, "easy", spec.task_id, k))
            except RolloutAborted as exc:
                logger.warning("easy filter: %s aborted: %s", spec.task_id, exc)
                return {"task_id": spec.task_id, "rewards": rewards, "status": "unevaluated-kept",
                        "error": str(exc)}
            finally:
                env.close()
            rewards.append(traj.terminal_reward)
        if any(r is None for r in rewards):
            status = "unevaluated-kept"
        elif all(r == 1 for r in rewards):
            status = "removed"
        else:
            status = "kept"
        return {"task_id": spec.task_id, "rewards": rewards, "status": status}

    with ThreadPoolExecutor(workers) as pool:
        log = list(pool.map(trial_outcomes, tasks))
    for entry in log:
        logger.info("easy filter %s: %s %s", entry["task_id"], entry["status"], entry["rewards"])
    survivors = [t for t, e in zip(tasks, log) if e["status"] != "removed"]
    return survivors, log


# --- collection ---

@dataclass
class DatasetManifest:
    accepted_path: str
    counts: dict[str, int]
    config: dict[str, Any]
    sha256: str
    quarantine: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "accepted_path": self.accepted_path,
            "counts": dict(self.counts),
            "sha256": self.sha256,
            "quarantine": dict(self.quarantine),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DatasetManifest:
        return cls(data["accepted_path"], data["counts"], data["config"], data["sha256"],
                   data.get("quarantine", {}))

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TaskOutcome:
    task_id: str
    status: str  # accepted | rejected | unevaluated | aborted
    trajectory: Trajectory | None = None
    error: str = ""


def run_task(spec: TaskSpec, factory: ActorFactory, cfg: RunConfig, seed: int) -> TaskOutcome:
    actors = factory(spec)
    env = actors.make_env()
    try:
        traj = rollout(
            State(spec.task_id, actors.initial_prompt), actors.policy, env,
            actors.judge, actors.rubrics, actors.side, cfg, seed,
        )
    except RolloutAborted as exc:
        logger.warning("task %s aborted: %s", spec.task_id, exc)
        return TaskOutcome(spec.task_id, "aborted", error=str(exc))
    finally:
        env.close()
    if traj.terminal_reward is None:
        return TaskOutcome(spec.task_id, "unevaluated", traj)
    return TaskOutcome(spec.task_id, "accepted" if accept(traj) else "rejected", traj)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def collect_dataset(
    tasks: Sequence[TaskSpec],
    cfg: AppConfig,
    out_dir: str | Path,
    factory: ActorFactory | None = None,
) -> DatasetManifest:
    """Run the configured strategy over ``tasks`` until ``cfg.cap`` acceptances.

    Results are consumed in task order, so the output does not depend on
    worker scheduling. Each pass retries the tasks not yet accepted.
    """
    if not tasks:
        raise ValueError("no tasks to collect from")
    if cfg.cap < 1:
        raise ValueError("cap must be positive")
    if cfg.seed is None:
        raise ValueError("collect needs an explicit seed")
    run_cfg = cfg.run_config()
    problems = run_cfg.problems()
    if problems:
        raise ValueError("; ".join(problems))
    factory = factory or default_actor_factory(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    partial = out / (ACCEPTED + PARTIAL_SUFFIX)
    counts = dict.fromkeys(
        ("attempted", "accepted", "rejected", "unevaluated", "aborted", "fallback_selections"), 0
    )
    accepted_ids: set[str] = set()
    batch = max(1, cfg.workers) * 4

    with partial.open("w", encoding="utf-8") as acc_fh, \
            (out / REJECTED).open("w", encoding="utf-8") as rej_fh, \
            (out / UNEVALUATED).open("w", encoding="utf-8") as unev_fh, \
            (out / ABORTED).open("w", encoding="utf-8") as abort_fh, \
            ThreadPoolExecutor(cfg.workers) as pool:
        sinks = {"accepted": acc_fh, "rejected": rej_fh, "unevaluated": unev_fh}
        for p in range(cfg.max_passes):
            pending = [t for t in tasks if t.task_id not in accepted_ids]
            for start in range(0, len(pending), batch):
                if counts["accepted"] >= cfg.cap:
                    break
                chunk = pending[start:start + batch]
                futures = [
                    pool.submit(run_task, t, factory, run_cfg, derive_seed(cfg.seed, t.task_id, "pass", p))
                    for t in chunk
                ]
                for fut in futures:
                    if counts["accepted"] >= cfg.cap:
                        fut.cancel()
                        continue
                    outcome = fut.result()
                    counts["attempted"] += 1
                    counts[outcome.status] += 1
                    if outcome.trajectory is not None:
                        counts["fallback_selections"] += int(outcome.trajectory.provenance.get("fallbacks", 0))
                        record = outcome.trajectory.to_dict()
                        record["provenance"] = {**record["provenance"], "pass": p}
                        sinks[outcome.status].write(dumps_record(record) + "\n")
                    else:
                        abort_fh.write(dumps_record({"task_id": outcome.task_id, "pass": p,
                                                     "error": outcome.error}) + "\n")
                    if outcome.status == "accepted":
                        accepted_ids.add(outcome.task_id)
            if counts["accepted"] >= cfg.cap:
                break

    final = out / ACCEPTED
    manifest = DatasetManifest(
        accepted_path=ACCEPTED,
        counts=counts,
        config=cfg.to_dict(),
        sha256=file_sha256(partial),
        quarantine={name: file_sha256(out / name) for name in (REJECTED, UNEVALUATED, ABORTED)},
    )
    os.replace(partial, final)
    _atomic_write(out / MANIFEST, json.dumps(manifest.to_dict(), indent=2, sort_keys=False) + "\n")
    logger.info("collected %d accepted of %d attempted", counts["accepted"], counts["attempted"])
    return manifest


# --- reading ---

def _read_jsonl(path: Path) -> Iterable[tuple[int, Any]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc


def read_dataset(
    path: str | Path, manifest: DatasetManifest | str | Path | None = None
) -> list[Trajectory]:
    """Load a finalized trajectory file, verifying its hash against ``manifest``."""
    path = Path(path)
    if path.name.endswith(PARTIAL_SUFFIX):
        raise DatasetError(f"{path} is an unfinalized partial file")
    if manifest is not None:
        if not isinstance(manifest, DatasetManifest):
            manifest = DatasetManifest.load(manifest)
        actual = file_sha256(path)
        if actual != manifest.sha256:
            raise IntegrityError(f"{path}: sha256 {actual} does not match manifest {manifest.sha256}")
    out = []
    for lineno, record in _read_jsonl(path):
        try:
            out.append(Trajectory.from_dict(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: invalid trajectory record: {exc}") from exc
    return out


def write_dataset(path: str | Path, trajectories: Iterable[Trajectory]) -> str:
    """Write trajectories as JSONL; returns the file's sha256."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(t.to_json() + "\n")
    return file_sha256(path)
