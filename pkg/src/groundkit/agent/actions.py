"""The planner's JSON action space and the two-line Thought/Action turn format."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, fields
from typing import Any, ClassVar, Mapping, Sequence, Union

from groundkit.replies import balanced_spans, loads_lenient

log = logging.getLogger(__name__)

DIRECTIONS = ("up", "down", "left", "right")
STATUSES = ("complete", "infeasible")
PARSE_REASONS = ("no_action_line", "bad_json", "unknown_action_type", "missing_field",
                 "extra_field_strict", "invalid_value")


class MalformedTurn(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        assert reason in PARSE_REASONS, reason
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class _Action:
    action_type: ClassVar[str]

    def to_json(self) -> dict[str, Any]:
        d = {"action_type": self.action_type}
        d.update({f.name: getattr(self, f.name) for f in fields(self)})
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class OpenApp(_Action):
    action_type = "open_app"
    app_name: str


@dataclass(frozen=True)
class Click(_Action):
    action_type = "click"
    target: str


@dataclass(frozen=True)
class LongPress(_Action):
    action_type = "long_press"
    target: str


@dataclass(frozen=True)
class InputText(_Action):
    action_type = "input_text"
    text: str
    target: str


@dataclass(frozen=True)
class Answer(_Action):
    action_type = "answer"
    text: str


@dataclass(frozen=True)
class NavigateHome(_Action):
    action_type = "navigate_home"


@dataclass(frozen=True)
class NavigateBack(_Action):
    action_type = "navigate_back"


@dataclass(frozen=True)
class Scroll(_Action):
    action_type = "scroll"
    direction: str


@dataclass(frozen=True)
class Status(_Action):
    action_type = "status"
    status: str


@dataclass(frozen=True)
class Wait(_Action):
    action_type = "wait"


AgentAction = Union[OpenApp, Click, LongPress, InputText, Answer, NavigateHome, NavigateBack, Scroll, Status, Wait]
ACTION_TYPES: dict[str, type] = {
    cls.action_type: cls
    for cls in (OpenApp, Click, LongPress, InputText, Answer, NavigateHome, NavigateBack, Scroll, Status, Wait)
}
CHOICES = {"direction": DIRECTIONS, "status": STATUSES}


def action_from_json(d: Mapping[str, Any], strict: bool = False,
                     apps: Sequence[str] | None = None) -> AgentAction:
    """Validate a decoded action object. Lenient mode drops unknown fields with a warning."""
    if not isinstance(d, Mapping):
        raise MalformedTurn("bad_json", "action is not a JSON object")
    kind = d.get("action_type")
    if "action_type" not in d:
        raise MalformedTurn("missing_field", "action_type")
    cls = ACTION_TYPES.get(kind) if isinstance(kind, str) else None
    if cls is None:
        raise MalformedTurn("unknown_action_type", repr(kind))
    names = [f.name for f in fields(cls)]
    extra = sorted(set(d) - set(names) - {"action_type"})
    if extra:
        if strict:
            raise MalformedTurn("extra_field_strict", ", ".join(extra))
        log.warning("ignoring extra fields on %s: %s", kind, extra)
    values = {}
    for name in names:
        if name not in d:
            raise MalformedTurn("missing_field", f"{kind}.{name}")
        v = d[name]
        if not isinstance(v, str):
            raise MalformedTurn("invalid_value", f"{kind}.{name} must be a string")
        if name in CHOICES and v not in CHOICES[name]:
            raise MalformedTurn("invalid_value", f"{kind}.{name}={v!r}")
        values[name] = v
    if cls is OpenApp and apps is not None and values["app_name"] not in apps:
        raise MalformedTurn("invalid_value", f"app {values['app_name']!r} is not available")
    return cls(**values)


@dataclass(frozen=True)
class PlannerTurn:
    thought: str
    action: AgentAction
    raw: str

    def to_json(self) -> dict[str, Any]:
        return {"thought": self.thought, "action": self.action.to_json(), "raw": self.raw}


_ACTION_LINE = re.compile(r"^\s*Action\s*:", re.M)
_THOUGHT = re.compile(r"^\s*Thought\s*:\s*", re.M)


def parse_planner_turn(raw: str, strict: bool = False, apps: Sequence[str] | None = None) -> PlannerTurn:
    m = _ACTION_LINE.search(raw)
    if m is None:
        raise MalformedTurn("no_action_line")
    head, tail = raw[:m.start()], raw[m.end():]
    t = _THOUGHT.search(head)
    thought = (head[t.end():] if t else head).strip()
    span = next(balanced_spans(tail), None)
    if span is None:
        raise MalformedTurn("bad_json", "no JSON object after Action:")
    try:
        obj = loads_lenient(tail[span[0]:span[1]])
    except json.JSONDecodeError as e:
        raise MalformedTurn("bad_json", str(e)) from None
    return PlannerTurn(thought, action_from_json(obj, strict, apps), raw)


def format_turn(thought: str, action: AgentAction) -> str:
    return f"Thought: {thought}\nAction: {action.dumps()}"
