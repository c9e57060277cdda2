"""A small deterministic SWE-like environment for desk-scale experiments.

Each task is a toy repository with one buggy line (plus optional decoy
look-alikes in other files). The agent gets bash, a string-replace editor
and ``finish``; tests, scripts and the reward are simulated from the
bug state. Everything is a pure function of the task seed and the
action sequence.
"""

from __future__ import annotations

import difflib
import fnmatch
import random
import shlex
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import toolcalls as tc
from .actors import JudgeRequest, RewardOutcome, StaleSnapshotError, CapabilityError
from .core import (
    FINISH_OBSERVATION,
    Action,
    ActionKind,
    ErrorTag,
    Observation,
    State,
    Step,
    Trajectory,
)
from .rubrics import RubricSet, SideInfo, select_turn_winner, weighted_score

SIM_VERSION = "sim-v1"

REPRO_SCRIPT = "reproduce_error.py"
COMPREHENSIVE_SCRIPT = "comprehensive_tests.py"
TEST_COMMAND = "python -m pytest tests/ -q"

# Fixed, version-pinned messages; the analyzer's default registry matches these.
MSG_PATH_NOT_FOUND = "ERROR: No such file or directory: {path}"
MSG_RANGE_ORDER = "ERROR: Invalid view_range [{a}, {b}]: start line exceeds end line."
MSG_RANGE_BOUNDS = "ERROR: Invalid view_range [{a}, {b}]: lines must lie within 1..{n}."
MSG_REPLACE_FAILED = (
    "ERROR: No replacement was performed, old_str `{old}` did not appear verbatim in {path}."
)
MSG_FILE_EXISTS = "ERROR: File already exists at: {path}. Cannot overwrite files using command `create`."
MSG_UNKNOWN_COMMAND = "bash: {cmd}: command not found"

SYSTEM_PROMPT = """\
You are a software engineering agent working inside a Python repository.
Resolve the issue below by calling exactly one tool per turn.

Tools:
- execute_bash(command): run a shell command (ls, find, grep, cat, python, pytest).
- str_replace_editor(command=view, path, view_range): show lines of a file.
- str_replace_editor(command=create, path, file_text): create a new file.
- str_replace_editor(command=str_replace, path, old_str, new_str): replace text in a file.
- finish(summary): end the task.

Suggested workflow: run the existing tests, inspect the relevant code, write and run a
reproduction script, fix the bug, re-run the tests and the reproduction script, check
edge cases with a more comprehensive test script, then finish with a summary."""


@dataclass(frozen=True)
class _Template:
    name: str
    params: str
    correct: str
    buggy: str
    decoy: str
    example: str
    expected: str
    actual: str


TEMPLATES = (
    _Template("add", "a, b", "a + b", "a - b", "subtract", "2, 3", "5", "-1"),
    _Template("multiply", "a, b", "a * b", "a + b", "add_values", "3, 4", "12", "7"),
    _Template("is_even", "n", "n % 2 == 0", "n % 2 == 1", "is_odd", "4", "True", "False"),
    _Template("maximum", "a, b", "a if a > b else b", "a if a < b else b", "minimum", "2, 7", "7", "2"),
    _Template("increment", "x", "x + 1", "x - 1", "decrement", "5", "6", "4"),
    _Template("rectangle_area", "w, h", "w * h", "w + h", "half_perimeter", "3, 5", "15", "8"),
    _Template("negate", "x", "-x", "x", "identity", "4", "-4", "4"),
    _Template("square", "x", "x * x", "x + x", "double", "3", "9", "6"),
    _Template("average", "a, b", "(a + b) / 2", "(a + b) * 2", "double_sum", "2, 4", "3.0", "12"),
    _Template("percent", "part, whole", "part / whole * 100", "part * whole / 100", "scaled_product", "1, 4", "25.0", "0.04"),
)

_PACKAGES = ("toolkit", "corelib", "mathkit", "utilkit", "numlib")
_MODULES = (
    "arith", "geometry", "stats", "units", "numeric", "calc",
    "measure", "scales", "metrics", "vectors", "ranges", "series",
)


@dataclass(frozen=True)
class SimTask:
    task_id: str
    seed: int
    difficulty: int
    files: dict[str, tuple[str, ...]]
    bug_location: tuple[str, int]  # (path, 0-based line index)
    buggy_line: str
    correct_line: str
    function: str
    example: str
    expected: str
    actual: str
    decoys: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        path, idx = self.bug_location
        if path not in self.files or not 0 <= idx < len(self.files[path]):
            raise ValueError("bug location is not inside the task files")
        if self.files[path][idx] != self.buggy_line or self.buggy_line == self.correct_line:
            raise ValueError("bug location must hold the buggy line, distinct from the fix")

    @property
    def fix_context(self) -> tuple[str, str]:
        """(old, new) snippet for the fix, anchored on the enclosing def line."""
        path, idx = self.bug_location
        head = self.files[path][idx - 1]
        return f"{head}\n{self.buggy_line}", f"{head}\n{self.correct_line}"

    @property
    def bug_path(self) -> str:
        return self.bug_location[0]

    @property
    def bug_line_number(self) -> int:
        return self.bug_location[1] + 1

    @property
    def test_file(self) -> str:
        module = self.bug_path.rsplit("/", 1)[-1].removesuffix(".py")
        return f"tests/test_{module}.py"

    @property
    def statement(self) -> str:
        return (
            f"In `{self.bug_path}`, calling `{self.function}({self.example})` returns "
            f"`{self.actual}` but it should return `{self.expected}`. Please fix "
            f"`{self.function}` so that the repository's tests pass."
        )

    @property
    def initial_prompt(self) -> str:
        return f"{SYSTEM_PROMPT}\n\n<issue>\n{self.statement}\n</issue>"

    @property
    def patch(self) -> str:
        before = [line + "\n" for line in self.files[self.bug_path]]
        after = list(before)
        after[self.bug_location[1]] = self.correct_line + "\n"
        diff = difflib.unified_diff(before, after, f"a/{self.bug_path}", f"b/{self.bug_path}")
        return f"diff --git a/{self.bug_path} b/{self.bug_path}\n" + "".join(diff)

    def side_info(self) -> SideInfo:
        return SideInfo(ground_truth_patch=self.patch, task_statement=self.statement)

    def initial_state(self) -> State:
        return State(self.task_id, self.initial_prompt)


def _function_lines(name: str, params: str, expr: str) -> list[str]:
    return [f"def {name}({params}):", f"    return {expr}"]


def make_task(seed: int, difficulty: int = 0) -> SimTask:
    """Generate a task deterministically from ``seed``.

    ``difficulty`` is the number of decoy files, each holding one line that
    looks exactly like the buggy one but is correct in its own function.
    """
    if difficulty < 0:
        raise ValueError("difficulty must be non-negative")
    rng = random.Random(f"{SIM_VERSION}/task/{seed}")
    target = rng.choice(TEMPLATES)
    buggy_line = f"    return {target.buggy}"
    others = [
        t for t in TEMPLATES
        if t is not target and f"    return {t.correct}" != buggy_line and t.decoy != target.name
    ]
    companions = rng.sample(others, k=rng.randint(2, 3))
    funcs = companions + [target]
    rng.shuffle(funcs)

    package = rng.choice(_PACKAGES)
    modules = list(_MODULES)
    rng.shuffle(modules)
    module_names = modules + [f"{m}{k}" for k in range(2, 2 + difficulty) for m in _MODULES]
    bug_path = f"{package}/{module_names[0]}.py"

    lines = [f'"""Helpers for the {module_names[0]} module."""']
    bug_idx = -1
    for t in funcs:
        lines += ["", ""]
        if t is target:
            lines += _function_lines(t.name, t.params, t.buggy)
            bug_idx = len(lines) - 1
        else:
            lines += _function_lines(t.name, t.params, t.correct)
    files = {bug_path: tuple(lines)}

    decoys = []
    for k in range(difficulty):
        path = f"{package}/{module_names[k + 1]}.py"
        filler = rng.choice(others)
        body = [f'"""Helpers for the {module_names[k + 1]} module."""', ""]
        pair = [_function_lines(target.decoy, target.params, target.buggy),
                _function_lines(filler.name, filler.params, filler.correct)]
        rng.shuffle(pair)
        for fn in pair:
            body += [""] + fn
        files[path] = tuple(body)
        decoys.append((path, body.index(buggy_line)))

    if sum(line == buggy_line for line in files[bug_path]) != 1:
        raise AssertionError("buggy line must be unique in its file")
    anchored = f"{lines[bug_idx - 1]}\n{buggy_line}"
    if "\n".join(lines).count(anchored) != 1:
        raise AssertionError("fix context must be unique in its file")
    return SimTask(
        task_id=f"sim-{seed}-d{difficulty}",
        seed=seed,
        difficulty=difficulty,
        files=files,
        bug_location=(bug_path, bug_idx),
        buggy_line=buggy_line,
        correct_line=f"    return {target.correct}",
        function=target.name,
        example=target.example,
        expected=target.expected,
        actual=target.actual,
        decoys=tuple(decoys),
    )


class _Lifecycle:
    def __init__(self) -> None:
        self.alive = True


@dataclass(frozen=True)
class SimSnapshot:
    files: tuple[tuple[str, tuple[str, ...]], ...]
    owner: _Lifecycle = field(repr=False, compare=False)

    @property
    def valid(self) -> bool:
        return self.owner.alive


class SimEnvironment:
    """Single-owner simulator instance. Parallelism means more instances."""

    def __init__(
        self,
        task: SimTask,
        supports_snapshot: bool = True,
        files: dict[str, list[str]] | None = None,
    ) -> None:
        self.task = task
        self.deterministic = True
        self.supports_snapshot = supports_snapshot
        src = files if files is not None else task.files
        self.files: dict[str, list[str]] = {p: list(lines) for p, lines in src.items()}
        self._life = _Lifecycle()
        self._busy = threading.Lock()

    @property
    def fixed(self) -> bool:
        path, idx = self.task.bug_location
        lines = self.files.get(path)
        return lines is not None and idx < len(lines) and lines[idx] == self.task.correct_line

    def clone(self) -> SimEnvironment:
        return SimEnvironment(self.task, self.supports_snapshot, self.files)

    def snapshot(self) -> SimSnapshot:
        if not self.supports_snapshot:
            raise CapabilityError("snapshots are disabled for this simulator")
        self._check_alive()
        frozen = tuple((p, tuple(lines)) for p, lines in self.files.items())
        return SimSnapshot(frozen, self._life)

    def restore(self, handle: SimSnapshot) -> SimEnvironment:
        if not self.supports_snapshot:
            raise CapabilityError("snapshots are disabled for this simulator")
        if not handle.valid:
            raise StaleSnapshotError("snapshot owner has been closed")
        return SimEnvironment(self.task, self.supports_snapshot, {p: list(l) for p, l in handle.files})

    def close(self) -> None:
        self._life.alive = False

    def reward(self, trajectory: Trajectory) -> RewardOutcome:
        return sim_reward(self.task, trajectory)

    def _check_alive(self) -> None:
        if not self._life.alive:
            raise RuntimeError("environment has been closed")

    def execute(self, action: Action) -> Observation:
        self._check_alive()
        if not self._busy.acquire(blocking=False):
            raise RuntimeError("concurrent execute on a single-owner environment")
        try:
            return sim_execute(self, action)
        finally:
            self._busy.release()


def _err(tag: ErrorTag, text: str) -> Observation:
    return Observation(text, error_tag=tag)


def sim_execute(env: SimEnvironment, action: Action) -> Observation:
    """Apply ``action`` to the simulator state. Failures come back as observations."""
    kind = action.kind
    if kind is ActionKind.FINISH:
        return FINISH_OBSERVATION
    if kind is ActionKind.FILE_VIEW:
        return _view(env, action.arg("path", ""), tc.parse_view_range(action.arg("view_range")))
    if kind is ActionKind.FILE_EDIT:
        return _replace(env, action.arg("path", ""), action.arg("old_str", ""), action.arg("new_str", ""))
    if kind is ActionKind.CREATE_FILE:
        return _create(env, action.arg("path", ""), action.arg("file_text", ""))
    if kind in (ActionKind.COMMAND, ActionKind.RUN_SCRIPT):
        return _bash(env, action.arg("command", action.raw_text) or "")
    return _err(ErrorTag.OTHER_ERROR, f"ERROR: unsupported action {action.tool_name}")


def _norm(path: str) -> str:
    path = path.strip()
    for prefix in ("/workspace/", "/repo/", "./"):
        if path.startswith(prefix):
            path = path[len(prefix):]
    return path.rstrip("/")


def _view(env: SimEnvironment, path: str, rng: tuple[int, int] | None) -> Observation:
    path = _norm(path)
    if path not in env.files:
        return _err(ErrorTag.PATH_NOT_FOUND, MSG_PATH_NOT_FOUND.format(path=path))
    lines = env.files[path]
    a, b = rng if rng else (1, len(lines))
    if a > b:
        return _err(ErrorTag.INVALID_VIEW_RANGE, MSG_RANGE_ORDER.format(a=a, b=b))
    if a < 1 or b > len(lines):
        return _err(ErrorTag.INVALID_VIEW_RANGE, MSG_RANGE_BOUNDS.format(a=a, b=b, n=len(lines)))
    body = "\n".join(f"{i:6}\t{lines[i - 1]}" for i in range(a, b + 1))
    return Observation(f"Here's the result of running `cat -n` on {path}:\n{body}")


def _replace(env: SimEnvironment, path: str, old: str, new: str) -> Observation:
    path = _norm(path)
    if path not in env.files:
        return _err(ErrorTag.PATH_NOT_FOUND, MSG_PATH_NOT_FOUND.format(path=path))
    text = "\n".join(env.files[path])
    if not old or old not in text:
        return _err(ErrorTag.REPLACE_FAILED, MSG_REPLACE_FAILED.format(old=old, path=path))
    pos = text.index(old)
    env.files[path] = text.replace(old, new, 1).split("\n")
    line = text[:pos].count("\n")
    lo, hi = max(0, line - 2), min(len(env.files[path]), line + 3)
    snippet = "\n".join(f"{i + 1:6}\t{env.files[path][i]}" for i in range(lo, hi))
    return Observation(
        f"The file {path} has been edited. Here's the result of running `cat -n` on a snippet:\n{snippet}"
    )


def _create(env: SimEnvironment, path: str, text: str) -> Observation:
    path = _norm(path)
    if not path:
        return _err(ErrorTag.OTHER_ERROR, "ERROR: missing path for create")
    if path in env.files:
        return _err(ErrorTag.OTHER_ERROR, MSG_FILE_EXISTS.format(path=path))
    env.files[path] = text.split("\n")
    return Observation(f"File created successfully at: {path}")


def _bash(env: SimEnvironment, command: str) -> Observation:
    outputs = []
    for part in command.split("&&"):
        obs = _bash_one(env, part.strip())
        outputs.append(obs.raw_text)
        if obs.error_tag is not None:
            return Observation("\n".join(o for o in outputs if o), error_tag=obs.error_tag)
    text = "\n".join(o for o in outputs if o)
    return Observation(text or "(no output)")


def _bash_one(env: SimEnvironment, command: str) -> Observation:
    try:
        argv = shlex.split(command)
    except ValueError:
        return _err(ErrorTag.OTHER_ERROR, f"bash: syntax error near `{command[:40]}`")
    if not argv:
        return Observation("")
    head, rest = argv[0], argv[1:]
    if head == "cd":
        target = _norm(rest[0]) if rest else "."
        if target in ("", ".", "..") or _is_dir(env, target):
            return Observation("")
        return _err(ErrorTag.PATH_NOT_FOUND, f"bash: cd: {target}: No such file or directory")
    if head == "pytest" or (head in ("python", "python3") and rest[:2] == ["-m", "pytest"]):
        return Observation(_pytest_output(env))
    if head in ("python", "python3") and rest:
        return _run_script(env, _norm(rest[0]))
    if head == "ls":
        return _ls(env, _norm(rest[-1]) if rest and not rest[-1].startswith("-") else "")
    if head == "cat" and rest:
        path = _norm(rest[0])
        if path not in env.files:
            return _err(ErrorTag.PATH_NOT_FOUND, f"cat: {path}: No such file or directory")
        return Observation("\n".join(env.files[path]))
    if head == "find":
        pattern = rest[rest.index("-name") + 1] if "-name" in rest[:-1] else "*"
        hits = sorted(p for p in env.files if fnmatch.fnmatch(p.rsplit("/", 1)[-1], pattern))
        return Observation("\n".join(f"./{p}" for p in hits))
    if head == "grep":
        return _grep(env, [a for a in rest if not a.startswith("-")])
    return _err(ErrorTag.OTHER_ERROR, MSG_UNKNOWN_COMMAND.format(cmd=head))


def _is_dir(env: SimEnvironment, path: str) -> bool:
    return any(p.startswith(path + "/") for p in env.files)


def _ls(env: SimEnvironment, path: str) -> Observation:
    if path and path not in env.files and not _is_dir(env, path):
        return _err(ErrorTag.PATH_NOT_FOUND, f"ls: cannot access '{path}': No such file or directory")
    if path in env.files:
        return Observation(path)
    prefix = f"{path}/" if path else ""
    entries = sorted({p[len(prefix):].split("/", 1)[0] + ("/" if "/" in p[len(prefix):] else "")
                      for p in env.files if p.startswith(prefix)})
    return Observation("\n".join(entries))


def _grep(env: SimEnvironment, args: list[str]) -> Observation:
    if not args:
        return _err(ErrorTag.OTHER_ERROR, "grep: missing pattern")
    pattern, paths = args[0], [_norm(p) for p in args[1:]] or [""]
    hits = []
    for path in sorted(env.files):
        if not any(t in ("", ".") or path == t or path.startswith(t + "/") for t in paths):
            continue
        for i, line in enumerate(env.files[path], start=1):
            if pattern in line:
                hits.append(f"{path}:{i}:{line}")
    missing = [p for p in paths if p not in ("", ".") and p not in env.files and not _is_dir(env, p)]
    if missing:
        return _err(ErrorTag.PATH_NOT_FOUND, f"grep: {missing[0]}: No such file or directory")
    return Observation("\n".join(hits))


def _pytest_output(env: SimEnvironment) -> str:
    task = env.task
    test = task.test_file
    n = 3
    if env.fixed:
        return f"collected {n} items\n\n{test} {'.' * n}  [100%]\n\n{n} passed"
    return (
        f"collected {n} items\n\n{test} ..F  [100%]\n\n"
        f"FAILED {test}::test_{task.function} - AssertionError: "
        f"assert {task.actual} == {task.expected}\n1 failed, {n - 1} passed"
    )


def _run_script(env: SimEnvironment, path: str) -> Observation:
    if path not in env.files:
        return _err(
            ErrorTag.PATH_NOT_FOUND,
            f"python: can't open file '{path}': [Errno 2] No such file or directory",
        )
    task = env.task
    call = f"{task.function}({task.example})"
    name = path.rsplit("/", 1)[-1]
    if "repro" in name:
        if env.fixed:
            return Observation(f"{call} = {task.expected}\nReproduction passed: the issue is resolved.")
        return Observation(
            f"Traceback (most recent call last):\n  File \"{path}\", line 4, in <module>\n"
            f"AssertionError: {call} returned {task.actual}, expected {task.expected}"
        )
    if "test" in name:
        if env.fixed:
            return Observation("Ran 6 edge-case checks: all passed.")
        return Observation(f"Ran 6 edge-case checks: 1 failed ({task.function}).")
    return Observation("(script produced no output)")


def sim_reward(task: SimTask, trajectory: Trajectory) -> RewardOutcome:
    """1 iff the buggy line holds the correct text after replaying the episode."""
    env = SimEnvironment(task)
    for step in trajectory.real_steps:
        sim_execute(env, step.action)
    if env.fixed:
        return RewardOutcome(1, "all tests passed")
    return RewardOutcome(0, f"FAILED {task.test_file}::test_{task.function}")


# --- workflow bookkeeping shared by the scripted policy and the oracle judge ---

MILESTONES = (
    "run_tests",
    "inspect",
    "create_repro",
    "run_repro",
    "fix",
    "rerun_tests",
    "create_comprehensive",
    "run_comprehensive",
    "finish",
)


def _is_test_run(action: Action) -> bool:
    cmd = action.arg("command", "") or ""
    return action.kind is ActionKind.COMMAND and "pytest" in cmd


def _script_name(action: Action) -> str | None:
    if action.kind is not ActionKind.RUN_SCRIPT:
        return None
    parts = (action.arg("command", "") or "").split()
    return _norm(parts[1]) if len(parts) > 1 else None


@dataclass
class StepAssessment:
    observation: Observation
    gained: frozenset[str]
    next_before: str | None
    repeat: bool
    touches_bug_file: bool

    @property
    def error(self) -> bool:
        return self.observation.error_tag is not None

    @property
    def on_plan(self) -> bool:
        return self.next_before is not None and self.next_before in self.gained


class WorkflowTracker:
    """Replays a history on a private simulator and tracks workflow milestones."""

    def __init__(self, task: SimTask) -> None:
        self.task = task
        self.env = SimEnvironment(task)
        self.done: set[str] = set()
        self.last_action: Action | None = None

    @classmethod
    def replay(cls, task: SimTask, steps: Sequence[Step]) -> WorkflowTracker:
        tracker = cls(task)
        for step in steps:
            tracker.apply(step.action)
        return tracker

    def clone(self) -> WorkflowTracker:
        other = WorkflowTracker.__new__(WorkflowTracker)
        other.task = self.task
        other.env = self.env.clone()
        other.done = set(self.done)
        other.last_action = self.last_action
        return other

    @property
    def next_milestone(self) -> str | None:
        for m in MILESTONES:
            if m not in self.done:
                return m
        return None

    def apply(self, action: Action) -> StepAssessment:
        nxt = self.next_milestone
        obs = sim_execute(self.env, action)
        gained: set[str] = set()
        path = _norm(action.arg("path", "") or "")
        if obs.error_tag is None:
            if _is_test_run(action):
                gained.add("run_tests")
                if self.env.fixed:
                    gained.add("rerun_tests")
            if action.kind is ActionKind.FILE_VIEW and path == self.task.bug_path:
                rng = tc.parse_view_range(action.arg("view_range"))
                if rng is None or rng[0] <= self.task.bug_line_number <= rng[1]:
                    gained.add("inspect")
            if action.kind is ActionKind.CREATE_FILE and path == REPRO_SCRIPT:
                gained.add("create_repro")
            if action.kind is ActionKind.CREATE_FILE and path == COMPREHENSIVE_SCRIPT:
                gained.add("create_comprehensive")
            script = _script_name(action)
            if script == REPRO_SCRIPT:
                gained.add("run_repro")
            if script == COMPREHENSIVE_SCRIPT:
                gained.add("run_comprehensive")
            if action.kind is ActionKind.FINISH:
                gained.add("finish")
        if self.env.fixed:
            gained.add("fix")
        else:
            self.done.discard("fix")
        gained -= self.done
        self.done |= gained
        repeat = self.last_action is not None and _same_call(self.last_action, action)
        self.last_action = action
        return StepAssessment(
            observation=obs,
            gained=frozenset(gained),
            next_before=nxt,
            repeat=repeat,
            touches_bug_file=path == self.task.bug_path,
        )

    def optimal_action(self) -> Action:
        task = self.task
        m = self.next_milestone
        if m in ("run_tests", "rerun_tests"):
            return tc.bash(TEST_COMMAND)
        if m == "inspect":
            n = len(self.env.files[task.bug_path])
            line = task.bug_line_number
            return tc.view(task.bug_path, max(1, line - 4), min(n, line + 4))
        if m == "create_repro":
            return tc.create(REPRO_SCRIPT, _repro_body(task))
        if m == "run_repro":
            return tc.bash(f"python {REPRO_SCRIPT}")
        if m == "fix":
            old, new = task.fix_context
            return tc.str_replace(task.bug_path, old, new)
        if m == "create_comprehensive":
            return tc.create(COMPREHENSIVE_SCRIPT, _comprehensive_body(task))
        if m == "run_comprehensive":
            return tc.bash(f"python {COMPREHENSIVE_SCRIPT}")
        return tc.finish(f"Fixed `{task.function}` in {task.bug_path}; tests and edge-case checks pass.")


def _same_call(a: Action, b: Action) -> bool:
    return a.tool_name == b.tool_name and a.arguments == b.arguments


def _module_path(task: SimTask) -> str:
    return task.bug_path.removesuffix(".py").replace("/", ".")


def _repro_body(task: SimTask) -> str:
    return (
        f"from {_module_path(task)} import {task.function}\n\n"
        f"result = {task.function}({task.example})\n"
        f"assert result == {task.expected}, f\"{task.function}({task.example}) returned {{result}}, expected {task.expected}\"\n"
        f"print(\"Reproduction passed\")"
    )


def _comprehensive_body(task: SimTask) -> str:
    return (
        f"from {_module_path(task)} import {task.function}\n\n"
        f"def check_example():\n    assert {task.function}({task.example}) == {task.expected}\n\n"
        f"if __name__ == \"__main__\":\n    check_example()\n    print(\"all edge cases passed\")"
    )


# --- scripted policy ---

NOISE_KINDS = ("redundant_view", "bad_path", "bad_view_range", "malformed_edit", "repeat_last")
DEFAULT_NOISE = {
    "redundant_view": 0.3,
    "bad_path": 0.2,
    "bad_view_range": 0.15,
    "malformed_edit": 0.2,
    "repeat_last": 0.15,
}


@dataclass(frozen=True)
class ScriptedPolicyConfig:
    competence: float = 0.6
    noise: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.competence <= 1.0:
            raise ValueError("competence must lie in [0, 1]")
        unknown = set(self.noise) - set(NOISE_KINDS)
        if unknown:
            raise ValueError(f"unknown noise kinds: {sorted(unknown)}")
        if any(p < 0 for p in self.noise.values()) or abs(sum(self.noise.values()) - 1.0) > 1e-9:
            raise ValueError("noise menu probabilities must be non-negative and sum to 1")


class ScriptedPolicy:
    """Follows the ideal workflow with probability ``competence`` per draw.

    Otherwise it draws from the noise menu. Each draw depends only on the
    state and its own seed.
    """

    def __init__(self, task: SimTask, config: ScriptedPolicyConfig | None = None) -> None:
        self.task = task
        self.config = config or ScriptedPolicyConfig()
        self._kinds = [k for k in NOISE_KINDS if self.config.noise.get(k, 0) > 0]
        self._weights = [self.config.noise[k] for k in self._kinds]

    def sample(self, state: State, seeds: Sequence[int]) -> list[Action]:
        tracker = WorkflowTracker.replay(self.task, state.history)
        return [self._draw(tracker, random.Random(seed)) for seed in seeds]

    def _draw(self, tracker: WorkflowTracker, rng: random.Random) -> Action:
        if rng.random() < self.config.competence:
            return tracker.optimal_action()
        kind = rng.choices(self._kinds, weights=self._weights)[0]
        return self.noise_action(kind, tracker, rng)

    def noise_action(self, kind: str, tracker: WorkflowTracker, rng: random.Random) -> Action:
        task = self.task
        bug_path = task.bug_path
        n = len(tracker.env.files[bug_path])
        if kind == "repeat_last":
            if tracker.last_action is not None:
                return tracker.last_action
            kind = "redundant_view"
        if kind == "redundant_view":
            if task.decoys:
                path, line = rng.choice(task.decoys)
                return tc.view(path, max(1, line - 1), line + 1)
            return tc.view(bug_path, 1, 1)
        if kind == "bad_path":
            module = bug_path.rsplit("/", 1)[-1].removesuffix(".py")
            missing = rng.choice(
                [f"src/{module}.py", f"{bug_path.rsplit('/', 1)[0]}/{module}_utils.py", task.test_file]
            )
            return tc.view(missing, 1, 40)
        if kind == "bad_view_range":
            start = rng.randint(5, n + 10)
            return tc.view(bug_path, start, rng.randint(1, start - 1))
        if kind == "malformed_edit":
            old, new = task.fix_context
            return tc.str_replace(bug_path, old.replace("return ", "return  ", 1), new)
        raise ValueError(f"unknown noise kind {kind!r}")


# --- oracle judge ---

def _turn_scores(a: StepAssessment) -> tuple[int, int, int, int]:
    if a.error:
        return (0, 0, 0, 0)
    workflow = 4 if a.on_plan else (2 if a.gained else 0)
    info = 4 if a.gained else 1
    strategic = 4 if a.gained else (2 if a.touches_bug_file else 1)
    control = 2 if (a.repeat or not a.gained) else 4
    return workflow, info, strategic, control


def segment_scores(assessments: Sequence[StepAssessment]) -> tuple[float, float, float, float]:
    n = len(assessments)
    if n == 0:
        return (0.0, 0.0, 0.0, 0.0)
    on_plan = sum(a.on_plan for a in assessments)
    gained = sum(bool(a.gained) for a in assessments)
    useful = sum(bool(a.gained) or (a.touches_bug_file and not a.error) for a in assessments)
    errors = sum(a.error for a in assessments)
    return (4 * on_plan / n, 4 * gained / n, 4 * useful / n, 4 * (1 - errors / n))


class OracleJudge:
    """Ground-truth GRM for the simulator.

    Scores candidates with rubric proxies computed from simulator state
    (workflow progress, information gain, proximity to the bug, error
    avoidance) and answers in the same textual formats a real judge is asked
    to use. It reads the structured side channel, never the prose prompt.
    """

    def __init__(self, task: SimTask, rubrics: RubricSet) -> None:
        if len(rubrics) != 4:
            raise ValueError("the oracle judge scores exactly four rubric proxies")
        self.task = task
        self.weights = rubrics.weights
        self.calls = 0

    def __call__(self, request: JudgeRequest) -> str:
        self.calls += 1
        if request.kind == "turn":
            return self.judge_turn(request.state, request.candidates)
        first, second = request.candidates
        first_index = request.meta.get("first_index", 0)
        second_index = request.meta.get("second_index", 1)
        return self.judge_pair(request.state, first, second, first_index < second_index)

    def turn_scores(self, state: State, candidates: Sequence[Action]) -> list[tuple[int, ...]]:
        base = WorkflowTracker.replay(self.task, state.history)
        return [_turn_scores(base.clone().apply(c)) for c in candidates]

    def judge_turn(self, state: State, candidates: Sequence[Action]) -> str:
        rows = self.turn_scores(state, candidates)
        totals = [weighted_score(r, self.weights) for r in rows]
        return self.verdict_text(rows, totals)

    @staticmethod
    def verdict_text(rows: Sequence[Sequence[int]], totals: Sequence[float]) -> str:
        parts = ["Evaluation of the candidate actions against the rubrics."]
        for i, (row, total) in enumerate(zip(rows, totals), start=1):
            lines = [f"ACTION {i}:"]
            lines += [f"- Rubric {k} score: {s}" for k, s in enumerate(row, start=1)]
            lines.append(f"Weighted total score: {total:.4f}")
            parts.append("\n".join(lines))
        parts.append(f"ACTION {select_turn_winner(totals) + 1} WINS")
        return "\n\n".join(parts)

    def segment_utility(self, prefix: State, steps: Sequence[Step]) -> float:
        tracker = WorkflowTracker.replay(self.task, prefix.history)
        assessments = [tracker.apply(s.action) for s in steps]
        return weighted_score_real(segment_scores(assessments), self.weights)

    def judge_pair(self, prefix: State, first: Any, second: Any, first_has_lower_index: bool = True) -> str:
        u1 = self.segment_utility(prefix, tuple(getattr(first, "steps", first)))
        u2 = self.segment_utility(prefix, tuple(getattr(second, "steps", second)))
        first_wins = u1 > u2 or (u1 == u2 and first_has_lower_index)
        return (
            f"Trajectory 1 utility: {u1:.4f}\nTrajectory 2 utility: {u2:.4f}\n"
            f"Final answer: {'YES' if first_wins else 'NO'}"
        )


def weighted_score_real(scores: Sequence[float], weights: Sequence[float]) -> float:
    return sum(s * w for s, w in zip(scores, weights))
