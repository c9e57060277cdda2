from __future__ import annotations

from grmfilter import toolcalls as tc
from grmfilter.core import ActionKind


def test_render_and_parse_round_trip():
    for action in [
        tc.bash("python -m pytest tests/ -q"),
        tc.view("pkg/a.py", 1, 20),
        tc.str_replace("pkg/a.py", "x = 1", "x = 2"),
        tc.create("reproduce_error.py", "print('hi')\n"),
        tc.finish("fixed"),
    ]:
        assert tc.parse_action(action.raw_text) == action


def test_script_runs_are_classified():
    assert tc.bash("python reproduce_error.py").kind is ActionKind.RUN_SCRIPT
    assert tc.bash("python3 comprehensive_tests.py").kind is ActionKind.RUN_SCRIPT
    assert tc.bash("python -m pytest").kind is ActionKind.COMMAND


def test_last_call_wins_and_thought_is_kept():
    text = "thinking\n" + tc.bash("ls").raw_text + "\n" + tc.view("a.py", 1, 2).raw_text
    action = tc.parse_action(text)
    assert action.kind is ActionKind.FILE_VIEW and action.raw_text == text


def test_unparseable_text_becomes_command():
    action = tc.parse_action("I will now look around.")
    assert action.kind is ActionKind.COMMAND
    assert action.arg("command") == "I will now look around."


def test_parse_view_range():
    assert tc.parse_view_range("[3, 9]") == (3, 9)
    assert tc.parse_view_range("[3]") is None
    assert tc.parse_view_range(None) is None
