"""Fixture builders shared by the test modules."""

from __future__ import annotations

import json
from pathlib import Path

from PIL import Image

from groundkit.core import BBox, GroundingSample, Perspective, Screenshot

# Assistant turn of the worked SFT example (CSDN bookmark).
WORKED_ASSISTANT = (
    "<think>\n"
    "I will analyze this instruction from Appearance-Based perspective, the user's instruction can be "
    "represented as : Click the bookmark with the red 'C' icon and the label 'CSDN' in the bookmarks bar. \n"
    "</think>\n"
    "<tool_call>\n"
    '{"name":"grounding","arguments":{"action":"click","coordinate":[588,67]}}\n'
    "</tool_call>"
)
WORKED_INSTRUCTION = "Click on the CSDN bookmark in the bookmarks bar to access the CSDN website."
WORKED_APPEARANCE = "Click the bookmark with the red 'C' icon and the label 'CSDN' in the bookmarks bar"

# The ten rows of the planner action table.
ACTION_ROWS = [
    '{ "action_type":"open_app", "app_name":"Chrome" }',
    '{ "action_type":"click", "target":"blue circle button at top-right" }',
    '{ "action_type":"long_press", "target":"message from John" }',
    '{ "action_type":"input_text", "text":"Hello", "target":"message input box" }',
    '{ "action_type":"answer", "text":"It\'s 25 degrees today." }',
    '{ "action_type":"navigate_home" }',
    '{ "action_type":"navigate_back" }',
    '{ "action_type":"scroll", "direction":"down" }',
    '{ "action_type":"status", "status":"complete" }',
    '{ "action_type":"wait" }',
]


def write_png(path: Path, width: int = 64, height: int = 48) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (width, height), (200, 200, 200)).save(path)
    return path


def make_sample(i: int, image_ref: str = "shot.png", width: int = 64, height: int = 48,
                bbox=(10, 10, 30, 30), tags=(), **instructions) -> GroundingSample:
    ins = {Perspective.ORIGINAL: f"click item {i}"}
    ins.update({Perspective.parse(k): v for k, v in instructions.items()})
    return GroundingSample(
        id=f"s{i:05d}",
        screenshot=Screenshot(f"shot{i:05d}", width, height, image_ref),
        gt_bbox=BBox(*bbox),
        instructions=ins,
        source="synthetic",
        tags=frozenset(tags),
    )


def write_jsonl(path: Path, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def pipeline_fixture(image_ref: str, n: int = 1000, flawed: int = 233, width: int = 64, height: int = 48):
    """``n`` samples whose first ``flawed`` entries have no overlapping detection.

    Of the rest, even indices get an identical detection (kept) and odd ones a
    slightly shifted one (refined). Returns (samples, detections-by-screenshot).
    """
    from groundkit.pipeline import DetectedElement

    samples, detections = [], {}
    for i in range(n):
        s = make_sample(i, image_ref=image_ref, width=width, height=height, bbox=(10, 10, 30, 30))
        samples.append(s)
        if i < flawed:
            boxes = [BBox(40, 30, 60, 45)]
        elif i % 2 == 0:
            boxes = [BBox(10, 10, 30, 30), BBox(0, 0, 5, 5)]
        else:
            boxes = [BBox(11, 11, 31, 31)]
        detections[s.screenshot.id] = [DetectedElement(b, "button", 0.9) for b in boxes]
    return samples, detections


def selective_verifier(reject_marker: str = "at this position"):
    """mock://pass behaviour, except verification fails for instructions containing ``reject_marker``."""
    from groundkit import mocks
    from groundkit.llm import message_text

    base = mocks.responder("pass")

    def respond(messages):
        text = message_text(messages)
        if "Quality Evaluation of a GUI Grounding Datum" in text and reject_marker in text:
            return mocks.verify_reply(unique=False, sized=True)
        return base(messages)

    return respond


def write_pipeline_inputs(root: Path, n: int = 40, flawed: int = 9) -> tuple[Path, Path]:
    """samples.jsonl and detections.jsonl for ``groundkit pipeline``, sharing one PNG."""
    png = write_png(root / "shot.png")
    samples, dets = pipeline_fixture(str(png), n=n, flawed=flawed)
    s = write_jsonl(root / "samples.jsonl", [x.to_json() for x in samples])
    d = write_jsonl(root / "detections.jsonl", [
        {"screenshot_id": sid, "elements": [{"bbox": e.bbox.as_list(), "label": e.label, "confidence": e.confidence}
                                            for e in els]}
        for sid, els in dets.items()
    ])
    return s, d


def dir_digests(out: Path, skip=("manifest.json",)) -> dict[str, str]:
    import hashlib

    return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.is_file() and p.name not in skip}
