"""Deterministic in-process responders behind ``mock://<name>`` endpoints.

``mock://pass`` routes on prompt content: augmentation prompts get four
templated rewrites of the source instruction, verification prompts always
pass, grounding prompts click the screen centre and classification prompts
tag ``app``. ``mock://reject`` is the same but fails every verification.
"""

from __future__ import annotations

import json
import re
from typing import Callable, Sequence

from groundkit.llm import Message, message_text

_INSTR = re.compile(r"Original Instruction:\n(.*)\Z", re.S)
_RES = re.compile(r"resolution is height (\d+) and width (\d+)")


def augment_reply(original: str) -> str:
    o = original.strip().rstrip(".")
    return json.dumps({
        "original_instruction": original.strip(),
        "translation": f"[zh] {o}",
        "appearance": f"{o}, the element with the distinctive look",
        "function": f"{o}, the element that performs this action",
        "spatial": f"{o}, the element at this position",
        "goal": f"{o}, to reach the intended goal",
    }, ensure_ascii=False)


def verify_reply(unique: bool = True, sized: bool = True) -> str:
    return (
        "The instruction points at the highlighted element.\n"
        + json.dumps({
            "instruction_evaluation": {"reasoning": "checked uniqueness", "is_unique": unique},
            "bbox_evaluation": {"reasoning": "checked box", "is_appropriately_sized": sized},
        })
    )


def _route(messages: Sequence[Message], verify_ok: bool) -> str:
    text = message_text(messages)
    if "Generate and Translate Unambiguous Grounding Instructions" in text:
        m = _INSTR.search(text)
        return augment_reply(m.group(1) if m else "")
    if "Quality Evaluation of a GUI Grounding Datum" in text:
        return verify_reply(verify_ok, verify_ok)
    m = _RES.search(text)
    if m:
        h, w = int(m.group(1)), int(m.group(2))
        return (
            "<think>\nThe target is at the centre.\n</think>\n<tool_call>\n"
            + json.dumps({"name": "grounding", "arguments": {"action": "click", "coordinate": [w // 2, h // 2]}})
            + "\n</tool_call>"
        )
    if "Taxonomy" in text or "Abbreviation:" in text:
        return json.dumps({"tags": ["app"]})
    return 'Thought: nothing to do.\nAction: {"action_type":"status","status":"complete"}'


RESPONDERS: dict[str, Callable[[Sequence[Message]], str]] = {
    "pass": lambda m: _route(m, True),
    "reject": lambda m: _route(m, False),
}


def responder(name: str) -> Callable[[Sequence[Message]], str]:
    try:
        return RESPONDERS[name]
    except KeyError:
        raise ValueError(f"unknown mock endpoint {name!r}; known: {sorted(RESPONDERS)}") from None
