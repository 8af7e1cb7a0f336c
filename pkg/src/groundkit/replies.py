"""Recovering JSON objects embedded in free-form model replies."""

from __future__ import annotations

import json
import re
from typing import Any, Iterator

_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def balanced_spans(text: str) -> Iterator[tuple[int, int]]:
    """Yield (start, end) of top-level brace-balanced spans, honouring JSON strings."""
    i, n = 0, len(text)
    while i < n:
        if text[i] != "{":
            i += 1
            continue
        depth, j, in_str, esc = 0, i, False, False
        while j < n:
            c = text[j]
            if in_str:
                if esc:
                    esc = False
                elif c == "\\":
                    esc = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    break
            j += 1
        if depth != 0:
            return
        yield i, j + 1
        i = j + 1


def loads_lenient(chunk: str) -> Any:
    try:
        return json.loads(chunk)
    except json.JSONDecodeError:
        return json.loads(_TRAILING_COMMA.sub(r"\1", chunk))


def json_objects(text: str) -> list[dict]:
    out = []
    for a, b in balanced_spans(text):
        try:
            obj = loads_lenient(text[a:b])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            out.append(obj)
    return out


def last_json_object(text: str) -> dict | None:
    """The final balanced object in ``text``; None if there is none or it does not parse."""
    spans = list(balanced_spans(text))
    if not spans:
        return None
    a, b = spans[-1]
    try:
        obj = loads_lenient(text[a:b])
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def first_json_object(text: str) -> dict | None:
    for a, b in balanced_spans(text):
        try:
            obj = loads_lenient(text[a:b])
        except json.JSONDecodeError:
            return None
        return obj if isinstance(obj, dict) else None
    return None
