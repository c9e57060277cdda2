"""Fixed inputs for the frozen prompt goldens."""

from __future__ import annotations

from grmfilter import toolcalls as tc
from grmfilter.core import Observation, State, Step
from grmfilter.rubrics import SideInfo

INSTRUCTION = (
    "You are a coding agent working in /workspace/repo.\n\n"
    "<issue>\nclamp(5, 0, 3) returns 5 instead of 3.\n</issue>"
)
PATCH = (
    "diff --git a/pkg/num.py b/pkg/num.py\n"
    "--- a/pkg/num.py\n"
    "+++ b/pkg/num.py\n"
    "@@ -1,2 +1,2 @@\n"
    " def clamp(x, lo, hi):\n"
    "-    return max(lo, x)\n"
    "+    return max(lo, min(x, hi))\n"
)
SIDE = SideInfo(ground_truth_patch=PATCH, task_statement="clamp ignores the upper bound")

FIRST = Step(tc.bash("python -m pytest tests/ -q"), Observation("1 failed, 2 passed in 0.01s"))
PREFIX = State("golden-1", INSTRUCTION, (FIRST,))

CANDIDATES = (
    tc.view("pkg/num.py", 1, 2, thought="Look at the implementation."),
    tc.bash("ls pkg"),
    tc.create("reproduce_error.py", "from pkg.num import clamp\nprint(clamp(5, 0, 3))"),
)

SEGMENT_A = (
    Step(CANDIDATES[0], Observation("1\tdef clamp(x, lo, hi):\n2\t    return max(lo, x)")),
    Step(
        tc.str_replace("pkg/num.py", "return max(lo, x)", "return max(lo, min(x, hi))"),
        Observation("The file pkg/num.py has been edited."),
    ),
)
SEGMENT_B = (
    Step(tc.view("src/num.py", 1, 40), Observation("ERROR: No such file or directory: src/num.py")),
    Step(tc.bash("ls"), Observation("pkg\ntests")),
)
