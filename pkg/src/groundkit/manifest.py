"""Run manifests: what ran, with which resolved config, on which inputs, producing which outputs."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from groundkit import __version__
from groundkit.jsonl import file_digest, write_json

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, Any]
    seed: int | None
    tool_version: str = __version__
    started_at: str = field(default_factory=_now)
    finished_at: str | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    exit_code: int | None = None

    def add_inputs(self, paths: Iterable[str | Path | None]) -> None:
        for p in paths:
            if p is not None and Path(p).is_file():
                self.inputs[str(p)] = file_digest(p)

    def finish(self, out_dir: str | Path, exit_code: int = 0) -> Path:
        """Digest every file under ``out_dir`` (except the manifest) and write the manifest there."""
        out_dir = Path(out_dir)
        self.finished_at = _now()
        self.exit_code = exit_code
        self.outputs = {
            str(p.relative_to(out_dir)): file_digest(p)
            for p in sorted(out_dir.rglob("*"))
            if p.is_file() and p.name != MANIFEST_NAME
        }
        path = out_dir / MANIFEST_NAME
        write_json(path, self.to_json())
        return path

    def to_json(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "exit_code": self.exit_code,
        }
