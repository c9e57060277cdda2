"""Text format for agent tool calls.

Assistant turns carry one call in the function-call markup used by
OpenHands-style scaffolds::

    <function=str_replace_editor>
    <parameter=command>view</parameter>
    <parameter=path>pkg/core.py</parameter>
    <parameter=view_range>[1, 20]</parameter>
    </function>

Text before the call (reasoning) is kept in ``raw_text`` but ignored here.
"""

from __future__ import annotations

import re

from .core import Action, ActionKind

BASH_TOOL = "execute_bash"
EDITOR_TOOL = "str_replace_editor"
FINISH_TOOL = "finish"

_FUNCTION_RE = re.compile(r"<function=([\w.-]+)>(.*?)</function>", re.DOTALL)
_PARAM_RE = re.compile(r"<parameter=([\w.-]+)>(.*?)</parameter>", re.DOTALL)
_SCRIPT_RE = re.compile(r"^\s*python3?\s+(?!-)(\S+\.py)\s*$")

_EDITOR_KINDS = {
    "view": ActionKind.FILE_VIEW,
    "str_replace": ActionKind.FILE_EDIT,
    "create": ActionKind.CREATE_FILE,
}


def render_call(tool_name: str, arguments: dict[str, str], thought: str = "") -> str:
    lines = [f"<function={tool_name}>"]
    for key, value in arguments.items():
        lines.append(f"<parameter={key}>{value}</parameter>")
    lines.append("</function>")
    call = "\n".join(lines)
    return f"{thought.strip()}\n\n{call}" if thought.strip() else call


def classify(tool_name: str, arguments: dict[str, str]) -> ActionKind | None:
    if tool_name == FINISH_TOOL:
        return ActionKind.FINISH
    if tool_name == BASH_TOOL and "command" in arguments:
        if _SCRIPT_RE.match(arguments["command"]):
            return ActionKind.RUN_SCRIPT
        return ActionKind.COMMAND
    if tool_name == EDITOR_TOOL:
        return _EDITOR_KINDS.get(arguments.get("command", ""))
    return None


def parse_action(text: str) -> Action:
    """Parse an assistant turn into an Action.

    Anything unparseable becomes a bash command holding the raw text, so
    the environment answers it with an error observation instead of the
    rollout failing.
    """
    matches = _FUNCTION_RE.findall(text)
    if matches:
        tool_name, body = matches[-1]
        arguments = {k: _unwrap(v) for k, v in _PARAM_RE.findall(body)}
        if tool_name == FINISH_TOOL:
            arguments = {k: v for k, v in arguments.items() if k == "summary"}
        kind = classify(tool_name, arguments)
        if kind is not None:
            return Action(kind, text, tool_name, tuple(arguments.items()))
    return Action(ActionKind.COMMAND, text, BASH_TOOL, (("command", text),))


def _unwrap(value: str) -> str:
    # values written on their own lines arrive wrapped in one newline each side
    if value.startswith("\n") and value.endswith("\n") and len(value) > 1:
        return value[1:-1]
    return value


def make_action(tool_name: str, arguments: dict[str, str], thought: str = "") -> Action:
    kind = classify(tool_name, arguments)
    if kind is None:
        raise ValueError(f"unknown tool call {tool_name}({arguments})")
    return Action(kind, render_call(tool_name, arguments, thought), tool_name, tuple(arguments.items()))


def bash(command: str, thought: str = "") -> Action:
    return make_action(BASH_TOOL, {"command": command}, thought)


def view(path: str, start: int, end: int, thought: str = "") -> Action:
    return make_action(
        EDITOR_TOOL, {"command": "view", "path": path, "view_range": f"[{start}, {end}]"}, thought
    )


def str_replace(path: str, old: str, new: str, thought: str = "") -> Action:
    return make_action(
        EDITOR_TOOL, {"command": "str_replace", "path": path, "old_str": old, "new_str": new}, thought
    )


def create(path: str, text: str, thought: str = "") -> Action:
    return make_action(EDITOR_TOOL, {"command": "create", "path": path, "file_text": text}, thought)


def finish(summary: str = "", thought: str = "") -> Action:
    return make_action(FINISH_TOOL, {"summary": summary} if summary else {}, thought)


def parse_view_range(value: str | None) -> tuple[int, int] | None:
    if not value:
        return None
    nums = re.findall(r"-?\d+", value)
    if len(nums) != 2:
        return None
    return int(nums[0]), int(nums[1])
