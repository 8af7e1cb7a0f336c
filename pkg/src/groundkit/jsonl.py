"""JSONL reading and writing.

Readers ignore an incomplete trailing line (no terminating newline and not
parseable), so a file cut short by an interrupted writer still loads.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def iter_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    # split leaves "" after a final newline; anything else is an unterminated tail
    tail = lines.pop()
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    if tail.strip():
        try:
            yield json.loads(tail)
        except json.JSONDecodeError:
            pass


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    return list(iter_jsonl(path))


class JsonlWriter:
    """Line-buffered writer; every record is flushed as one complete line."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w", encoding="utf-8", newline="\n")
        self.count = 0

    def write(self, record: Any) -> None:
        self._f.write(dumps(record) + "\n")
        self._f.flush()
        self.count += 1

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_jsonl(path: str | os.PathLike, records: Iterable[Any]) -> int:
    with JsonlWriter(path) as w:
        for r in records:
            w.write(r)
        return w.count


def write_json(path: str | os.PathLike, obj: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()
