"""Hand-labeled corpus for the analyzer.

Each step is written next to its expected error category (P = path not
found, R = invalid view range, S = string replacement failure, "" = none).
Behavior flags are labeled per trajectory. Tagged steps carry the
environment's error_tag; untagged ones must be caught by text patterns,
as for corpora imported from other agent runs.
"""

from __future__ import annotations

from grmfilter import toolcalls as tc
from grmfilter.core import FINISH_OBSERVATION, ErrorTag, Observation, State, Trajectory

T = 12
CAT = {"P": "path_not_found", "R": "invalid_view_range", "S": "replace_failed", "": None}
TAG = {"P": ErrorTag.PATH_NOT_FOUND, "R": ErrorTag.INVALID_VIEW_RANGE, "S": ErrorTag.REPLACE_FAILED}

OK = "ok"
PYTEST = "python -m pytest tests/ -q"
NOFILE = "ERROR: No such file or directory: src/x.py"
RANGE = "ERROR: Invalid view_range [9, 3]: start line exceeds end line."
NOREPL = "ERROR: No replacement was performed, old_str `y` did not appear verbatim in a.py."


def ok(action, text=OK):
    return action, Observation(text), ""


def tagged(action, label, text):
    return action, Observation(text, error_tag=TAG[label]), label


def untagged(action, label, text):
    return action, Observation(text), label


def fin():
    return tc.finish("done"), FINISH_OBSERVATION, ""


V = tc.view("a.py", 1, 5)
E = tc.str_replace("a.py", "x", "y")
E_BAD = tc.str_replace("a.py", "y", "z")

FLAGS = ("created_test", "created_repro", "ran_test", "ran_repro")

# (steps, set of true behavior flags)
SPECS = [
    # 1
    ([ok(tc.bash(PYTEST)), ok(V), ok(tc.create("reproduce_error.py", "print(1)")),
      ok(tc.bash("python reproduce_error.py")), ok(E), fin()],
     {"ran_test", "created_repro", "ran_repro"}),
    # 2
    ([tagged(tc.view("src/x.py", 1, 5), "P", NOFILE), ok(V), ok(E), fin()], set()),
    # 3
    ([ok(tc.bash("pytest -q")), tagged(tc.view("a.py", 9, 3), "R", RANGE),
      tagged(tc.view("a.py", 9, 3), "R", RANGE), ok(E), fin()], {"ran_test"}),
    # 4
    ([ok(tc.create("tests/test_edge.py", "assert True")), ok(tc.bash("python tests/test_edge.py")),
      tagged(E_BAD, "S", NOREPL), ok(E), fin()], {"created_test", "ran_test"}),
    # 5: text-only detection
    ([untagged(tc.bash("cat missing.txt"), "P", "cat: missing.txt: No such file or directory"),
      untagged(tc.view("a.py", 9, 3), "R", "ERROR: Invalid `view_range` [9, 3]: start line exceeds end line."),
      untagged(E_BAD, "S", NOREPL), fin()], set()),
    # 6: two categories in one text, path wins
    ([untagged(tc.bash("ls foo"), "P",
               "ls: cannot access 'foo': No such file or directory\nstart line exceeds end line"),
      fin()], set()),
    # 7: heredoc repro
    ([ok(tc.bash("cat > repro_bug.py << 'EOF'\nprint(1)\nEOF")), ok(tc.bash("python3 repro_bug.py")), fin()],
     {"created_repro", "ran_repro"}),
    # 8: heredoc test + unittest
    ([ok(tc.bash("cat > test_regression.py <<EOF\nassert True\nEOF")),
      ok(tc.bash("python -m unittest test_regression")), fin()],
     {"created_test", "ran_test"}),
    # 9: mentions without the behavior
    ([ok(tc.view("reproduce_error.py", 1, 5)),
      ok(tc.create("notes.md", "remember to run pytest and reproduce_error.py")), fin()], set()),
    # 10: an error outside the taxonomy
    ([(tc.bash("frobnicate"), Observation("bash: frobnicate: command not found", error_tag=ErrorTag.OTHER_ERROR), ""),
      fin()], set()),
    # 11: the full workflow
    ([ok(tc.bash(PYTEST)), ok(V), ok(tc.create("reproduce_error.py", "print(1)")),
      ok(tc.bash("python reproduce_error.py")), ok(E), ok(tc.bash(PYTEST)),
      ok(tc.create("comprehensive_tests.py", "print(2)")), ok(tc.bash("python comprehensive_tests.py")), fin()],
     set(FLAGS)),
    # 12: runs into the horizon
    ([ok(V), tagged(tc.view("src/x.py", 1, 5), "P", NOFILE)] * 6, set()),
    # 13
    ([tagged(E_BAD, "S", NOREPL)] * 3 + [ok(E), fin()], set()),
    # 14
    ([tagged(tc.bash("python reproduce_error.py"), "P",
             "python: can't open file 'reproduce_error.py': [Errno 2] No such file or directory"),
      ok(tc.create("reproduce_error.py", "print(1)")), ok(tc.bash("python reproduce_error.py")), fin()],
     {"created_repro", "ran_repro"}),
    # 15
    ([ok(tc.bash("pytest tests/test_a.py")), fin()], {"ran_test"}),
    # 16
    ([fin()], set()),
    # 17
    ([ok(tc.create("tests/test_fix.py", "assert True")), fin()], {"created_test"}),
    # 18
    ([untagged(E_BAD, "S", "ERROR: No replacement was performed"),
      untagged(tc.view("a.py", 0, 3), "R", "ERROR: Invalid view_range [0, 3]: lines must lie within 1..10."),
      fin()], set()),
    # 19
    ([ok(tc.bash(PYTEST)), tagged(tc.view("a.py", 9, 3), "R", RANGE),
      tagged(tc.view("src/x.py", 1, 5), "P", NOFILE), ok(tc.create("reproduce_error.py", "print(1)")), fin()],
     {"ran_test", "created_repro"}),
    # 20
    ([ok(V), ok(V), ok(V), ok(E), ok(tc.bash("python -m pytest")), fin()], {"ran_test"}),
]

# corpus totals, counted by hand from the specs above
EXPECTED = {
    "trajectories": 20,
    "turns": 86,
    "error_turns": 22,
    "breakdown": {"path_not_found": 11, "invalid_view_range": 5, "replace_failed": 6},
    "task_error_rate": 0.500,  # 10 of 20
    "turn_error_rate": 0.256,  # 22 / 86
    "average_turns": 4.300,  # 86 / 20
    "behavior_ratios": {"created_test": 0.20, "created_repro": 0.25, "ran_test": 0.40, "ran_repro": 0.20},
}


def build():
    """[(trajectory, expected per-step categories, expected flags)]"""
    out = []
    for i, (steps, flags) in enumerate(SPECS, start=1):
        state = State(f"fixture-{i:02d}", "fixture task")
        state = state.extend([(a, o) for a, o, _ in steps])
        traj = Trajectory.from_state(state, T, 1)
        labels = [CAT[lab] for _, _, lab in steps] + [None] * (T - len(steps))
        out.append((traj, labels, {f: f in flags for f in FLAGS}))
    return out
