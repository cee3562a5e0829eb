"""The textual language agents speak: prompts, responses, and their parser.

One grammar serves the CLI, training-pair generation, and the external
policy protocol, so humans, files and providers all read the same strings.

    prompt:   How to enhance the quality of this image? Execution history: <H>.
              <H> = None | "; "-joined  <k>.<task> <tool>  items,
              rolled-back items rendered  <k>.Rollback(<task> <tool>)
    response: 1.<task> <tool>. 2.<task> <tool>.   |   Rollback   |   Stop
"""

from __future__ import annotations

import re

from .agent import (
    AgentAction,
    HistoryEntry,
    PipelineAction,
    RollbackAction,
    StepAction,
    StopAction,
)
from .degrade import Task
from .errors import EmptyPipeline, ResponseParseError, UnknownTask

PROMPT_PREFIX = "How to enhance the quality of this image? Execution history: "


def format_prompt(history: list[HistoryEntry]) -> str:
    if not history:
        body = "None"
    else:
        items = []
        for k, e in enumerate(history, start=1):
            if e.kind == "rolled_back":
                items.append(f"{k}.Rollback({e.task.value} {e.tool_id})")
            else:
                items.append(f"{k}.{e.task.value} {e.tool_id}")
        body = "; ".join(items)
    return f"{PROMPT_PREFIX}{body}."


def format_response(action: AgentAction) -> str:
    if isinstance(action, StopAction):
        return "Stop"
    if isinstance(action, RollbackAction):
        return "Rollback"
    if isinstance(action, StepAction):
        steps = ((action.task, action.tool_id),)
    elif isinstance(action, PipelineAction):
        steps = action.steps
    else:
        raise EmptyPipeline(f"cannot format {type(action).__name__}")
    if not steps:
        raise EmptyPipeline("cannot format an empty pipeline")
    return " ".join(f"{k}.{task.value} {tool}." for k, (task, tool) in enumerate(steps, start=1))


_STEP_RE = re.compile(r"(\d+)\.(\S+) (\S+?)\.(?: |$)")


def parse_response(text: str) -> AgentAction:
    """Exact inverse of format_response, tolerant of surrounding whitespace."""
    s = text.strip()
    if s == "Stop":
        return StopAction()
    if s == "Rollback":
        return RollbackAction()
    if not s:
        raise ResponseParseError("empty response", 0)

    steps = []
    pos = 0
    k = 1
    while pos < len(s):
        m = _STEP_RE.match(s, pos)
        if not m:
            raise ResponseParseError(f"expected '<{k}>.<task> <tool>.'", pos)
        if int(m.group(1)) != k:
            raise ResponseParseError(f"expected step number {k}, got {m.group(1)}", pos)
        try:
            task = Task.parse(m.group(2))
        except UnknownTask as exc:
            raise ResponseParseError(str(exc), m.start(2)) from exc
        steps.append((task, m.group(3)))
        pos = m.end()
        k += 1
    if not steps:
        raise ResponseParseError("no steps found", 0)
    return PipelineAction(steps=tuple(steps))
