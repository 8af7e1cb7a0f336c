"""Point-in-box evaluation of grounding predictions.

Unparseable model output is scored as wrong, never excluded: the
denominator is always the full prediction set.
"""

from __future__ import annotations

import csv
import io
import json
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from groundkit import prompts
from groundkit.core import BBox, GroundingSample, Instruction, Perspective, Point, Screenshot, point_in_box
from groundkit.llm import (
    Endpoint,
    EndpointError,
    LlmEndpointConfig,
    image_part,
    make_endpoint,
    map_bounded,
    message,
    text_part,
)
from groundkit.replies import last_json_object


class MissingGroundTruth(KeyError):
    pass


class EmptyInput(ValueError):
    pass


class UnknownGroupKey(KeyError):
    pass


class EmptyMatrix(ValueError):
    pass


FAIL_REASONS = ("missing_tool_call", "bad_json", "missing_coordinate", "non_numeric", "endpoint_error")

_THINK = re.compile(r"<think>(.*?)</think>", re.S)
_TOOL = re.compile(r"<tool_call>(.*?)</tool_call>", re.S)


@dataclass(frozen=True)
class ParsedResponse:
    reasoning: str | None
    point: Point | None
    fail_reason: str | None = None


def parse_response(raw: str) -> ParsedResponse:
    """Extract reasoning and click point from a ``<think>``/``<tool_call>`` reply. Never raises."""
    m = _THINK.search(raw)
    reasoning = m.group(1).strip() if m else None
    m = _TOOL.search(raw)
    if not m:
        return ParsedResponse(reasoning, None, "missing_tool_call")
    try:
        call = json.loads(m.group(1).strip())
    except json.JSONDecodeError:
        return ParsedResponse(reasoning, None, "bad_json")
    if not isinstance(call, dict):
        return ParsedResponse(reasoning, None, "bad_json")
    args = call.get("arguments", call)
    if isinstance(args, str):
        try:
            args = json.loads(args)
        except json.JSONDecodeError:
            return ParsedResponse(reasoning, None, "bad_json")
    coord = args.get("coordinate") if isinstance(args, dict) else None
    if coord is None:
        return ParsedResponse(reasoning, None, "missing_coordinate")
    if not isinstance(coord, (list, tuple)) or len(coord) != 2:
        return ParsedResponse(reasoning, None, "non_numeric")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in coord):
        return ParsedResponse(reasoning, None, "non_numeric")
    try:
        point = Point(coord[0], coord[1])
    except ValueError:
        return ParsedResponse(reasoning, None, "non_numeric")
    return ParsedResponse(reasoning, point)


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    perspective_used: Perspective
    raw_response: str
    parsed_point: Point | None
    reasoning_text: str | None = None
    latency: float = 0.0
    fail_reason: str | None = None

    @classmethod
    def from_raw(cls, sample_id: str, perspective: Perspective, raw: str, latency: float = 0.0,
                 scale: float = 1.0) -> "Prediction":
        r = parse_response(raw)
        point = r.point
        if point is not None and scale != 1.0:
            point = Point(point.x * scale, point.y * scale)
        return cls(sample_id, perspective, raw, point, r.reasoning, latency, r.fail_reason)

    def to_json(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "perspective": self.perspective_used.value,
            "raw_response": self.raw_response,
            "point": self.parsed_point.as_list() if self.parsed_point else None,
            "fail_reason": self.fail_reason,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "Prediction":
        pt = d.get("point")
        return cls(
            sample_id=str(d["sample_id"]),
            perspective_used=Perspective.parse(d.get("perspective", "original")),
            raw_response=d.get("raw_response", ""),
            parsed_point=Point(*pt) if pt is not None else None,
            fail_reason=d.get("fail_reason"),
        )


def is_correct(pred: Prediction, gt: BBox) -> bool:
    return pred.parsed_point is not None and point_in_box(pred.parsed_point, gt)


def _lookup(gts: Mapping[str, BBox], sample_id: str) -> BBox:
    try:
        return gts[sample_id]
    except KeyError:
        raise MissingGroundTruth(f"no ground truth for sample {sample_id!r}") from None


def accuracy(preds: Sequence[Prediction], gts: Mapping[str, BBox]) -> float:
    if not preds:
        raise EmptyInput("no predictions")
    correct = sum(is_correct(p, _lookup(gts, p.sample_id)) for p in preds)
    return correct / len(preds)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class GroupStats:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def exact(self) -> Fraction:
        return Fraction(self.correct, self.total)


@dataclass
class EvalReport:
    group_keys: tuple[str, ...]
    groups: dict[str, GroupStats]
    correct: int
    n: int
    parse_failure_count: int
    fail_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def overall_accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def to_json(self) -> dict[str, Any]:
        return {
            "group_keys": list(self.group_keys),
            "overall_accuracy": self.overall_accuracy,
            "correct": self.correct,
            "n": self.n,
            "parse_failure_count": self.parse_failure_count,
            "fail_reasons": dict(sorted(self.fail_reasons.items())),
            "groups": {
                k: {"correct": g.correct, "total": g.total, "accuracy": g.accuracy}
                for k, g in self.groups.items()
            },
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.group_keys, "correct", "total", "accuracy"])
        for key, g in self.groups.items():
            w.writerow([*key.split(GROUP_SEP), g.correct, g.total, f"{g.accuracy:.6f}"])
        w.writerow(["Avg."] + [""] * (len(self.group_keys) - 1) + [self.correct, self.n, f"{self.overall_accuracy:.6f}"])
        return buf.getvalue()

    def render_table(self, percent: bool = True) -> str:
        """Plain-text table: one column per group, then an ``Avg.`` column.

        With two grouping keys the header has two rows (outer key values
        spanning their inner values), like a platform/subset breakdown.
        """
        def fmt(v: float) -> str:
            return f"{100 * v:.1f}" if percent else f"{v:.4f}"

        keys = list(self.groups)
        cells = [fmt(self.groups[k].accuracy) for k in keys] + [fmt(self.overall_accuracy)]
        if len(self.group_keys) == 2:
            outer = [k.split(GROUP_SEP)[0] for k in keys]
            inner = [k.split(GROUP_SEP)[1] for k in keys]
            width = max([len(x) for x in inner + cells + ["Avg."]])
            top = []
            i = 0
            while i < len(outer):
                j = i
                while j < len(outer) and outer[j] == outer[i]:
                    j += 1
                span = (j - i) * (width + 3) - 3
                top.append(outer[i][:span].center(span))
                i = j
            row1 = "| " + " | ".join(top) + " | " + "".center(width) + " |"
            row2 = "| " + " | ".join(x.center(width) for x in inner + ["Avg."]) + " |"
            row3 = "| " + " | ".join(c.center(width) for c in cells) + " |"
            rule = "-" * len(row2)
            return "\n".join([rule, row1, row2, rule, row3, rule]) + "\n"
        header = keys + ["Avg."]
        width = max(len(x) for x in header + cells)
        row1 = "| " + " | ".join(h.center(width) for h in header) + " |"
        row2 = "| " + " | ".join(c.center(width) for c in cells) + " |"
        rule = "-" * len(row1)
        return "\n".join([rule, row1, rule, row2, rule]) + "\n"


GROUP_SEP = "/"
MISSING_TAG = "(none)"


def sample_group(tags: Iterable[str], group_keys: Sequence[str]) -> str:
    values = []
    for dim in group_keys:
        prefix = dim + ":"
        found = sorted(t[len(prefix):] for t in tags if t.startswith(prefix))
        values.append(found[0] if found else MISSING_TAG)
    return GROUP_SEP.join(values)


def grouped_report(preds: Sequence[Prediction], gts: Mapping[str, BBox],
                   sample_tags: Mapping[str, Iterable[str]], group_keys: Sequence[str]) -> EvalReport:
    """Accuracy per combination of ``dimension:value`` tags, groups ordered lexicographically."""
    if not preds:
        raise EmptyInput("no predictions")
    group_keys = tuple(group_keys)
    dims = {t.split(":", 1)[0] for tags in sample_tags.values() for t in tags if ":" in t}
    for k in group_keys:
        if k not in dims:
            raise UnknownGroupKey(f"no sample carries a {k!r} tag")
    counts: dict[str, list[int]] = {}
    correct = 0
    fails: Counter[str] = Counter()
    for p in preds:
        ok = is_correct(p, _lookup(gts, p.sample_id))
        correct += ok
        if p.parsed_point is None:
            fails[p.fail_reason or "unknown"] += 1
        key = sample_group(sample_tags.get(p.sample_id, ()), group_keys) if group_keys else "all"
        c = counts.setdefault(key, [0, 0])
        c[0] += ok
        c[1] += 1
    groups = {k: GroupStats(*counts[k]) for k in sorted(counts)}
    return EvalReport(group_keys or ("all",), groups, correct, len(preds), sum(fails.values()), dict(fails))


# --------------------------------------------------------------- grounding


def ground(sample: GroundingSample, instruction: Instruction, template_id: str,
           endpoint: Endpoint | LlmEndpointConfig, image_png: bytes | None = None,
           scale: float = 1.0, image_root: str | None = None) -> Prediction:
    """Ask a grounding model for a click point; endpoint failures become a failed Prediction."""
    return ground_on(sample.screenshot, instruction, template_id, endpoint, image_png, sample.id, scale, image_root)


def ground_on(shot: Screenshot, instruction: Instruction, template_id: str,
              endpoint: Endpoint | LlmEndpointConfig, image_png: bytes | None = None,
              sample_id: str | None = None, scale: float = 1.0, image_root: str | None = None) -> Prediction:
    """:func:`ground` for a bare screenshot, as used by the agent executor."""
    if isinstance(endpoint, LlmEndpointConfig):
        endpoint = make_endpoint(endpoint)
    system = prompts.render_ground_system(template_id, shot.width, shot.height)
    if image_png is None:
        from groundkit.pipeline import load_image

        buf = io.BytesIO()
        load_image(shot.image_ref, image_root).save(buf, format="PNG")
        image_png = buf.getvalue()
    msgs = [message("system", text_part(system)), message("user", image_part(image_png), text_part(instruction.text))]
    sid = sample_id if sample_id is not None else shot.id
    t0 = time.perf_counter()
    try:
        raw = endpoint.complete(msgs)
    except EndpointError as e:
        return Prediction(sid, instruction.perspective, str(e), None, None,
                          time.perf_counter() - t0, "endpoint_error")
    return Prediction.from_raw(sid, instruction.perspective, raw, time.perf_counter() - t0, scale)


# ------------------------------------------------------------------ oracle


@dataclass(frozen=True)
class CorrectnessMatrix:
    rows: tuple[str, ...]
    cols: tuple[Perspective, ...]
    cells: tuple[tuple[bool, ...], ...]

    def __post_init__(self):
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.cols) for r in self.cells):
            raise ValueError("correctness matrix is not rectangular")

    @classmethod
    def from_predictions(cls, preds: Sequence[Prediction], gts: Mapping[str, BBox]) -> "CorrectnessMatrix":
        table: dict[str, dict[Perspective, bool]] = {}
        for p in preds:
            table.setdefault(p.sample_id, {})[p.perspective_used] = is_correct(p, _lookup(gts, p.sample_id))
        cols = tuple(c for c in Perspective if any(c in r for r in table.values()))
        rows = tuple(sorted(table))
        for r in rows:
            if set(table[r]) != set(cols):
                raise ValueError(f"sample {r!r} lacks predictions for some perspectives")
        return cls(rows, cols, tuple(tuple(table[r][c] for c in cols) for r in rows))

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "CorrectnessMatrix":
        """Rows like ``{"sample_id": ..., "correct": {"original": true, "appearance": false}}``."""
        records = list(records)
        if not records:
            return cls((), (), ())
        cols = tuple(Perspective.parse(k) for k in records[0]["correct"])
        rows, cells = [], []
        for r in records:
            row = {Perspective.parse(k): bool(v) for k, v in r["correct"].items()}
            if set(row) != set(cols):
                raise ValueError(f"row {r.get('sample_id')!r} has different columns")
            rows.append(str(r["sample_id"]))
            cells.append(tuple(row[c] for c in cols))
        return cls(tuple(rows), cols, tuple(cells))


@dataclass(frozen=True)
class OracleResult:
    per_perspective: dict[Perspective, float]
    combined: float
    baseline: Perspective
    relative_gain: float

    def to_json(self) -> dict[str, Any]:
        return {
            "per_perspective": {p.value: v for p, v in self.per_perspective.items()},
            "combined": self.combined,
            "baseline": self.baseline.value,
            "relative_gain": self.relative_gain,
        }


def oracle_combined(m: CorrectnessMatrix) -> OracleResult:
    """Per-sample best-of-perspectives accuracy and its gain over a baseline column.

    The baseline is the original-instruction column when present, otherwise
    the best single column. A zero baseline gives an infinite gain (or 0 if
    the combined accuracy is also 0).
    """
    if not m.rows or not m.cols:
        raise EmptyMatrix("correctness matrix is empty")
    n = len(m.rows)
    per = {c: sum(row[j] for row in m.cells) / n for j, c in enumerate(m.cols)}
    combined = sum(any(row) for row in m.cells) / n
    if Perspective.ORIGINAL in per:
        base = Perspective.ORIGINAL
    else:
        base = max(per, key=lambda c: (per[c], -m.cols.index(c)))
    b = per[base]
    if b == 0:
        gain = float("inf") if combined > 0 else 0.0
    else:
        gain = (combined - b) / b
    return OracleResult(per, combined, base, gain)


# ---------------------------------------------------------- classification


@dataclass(frozen=True)
class ReasoningTagSet:
    response_id: str
    tags: frozenset[str]
    unknown_tags: frozenset[str] = frozenset()
    error: str | None = None

    @property
    def flagged(self) -> bool:
        return bool(self.unknown_tags) or self.error is not None

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.response_id,
            "tags": sorted(self.tags),
            "unknown_tags": sorted(self.unknown_tags),
            "flagged": self.flagged,
            "error": self.error,
        }


def parse_tag_reply(response_id: str, raw: str, taxonomy: Sequence[str]) -> ReasoningTagSet:
    obj = last_json_object(raw)
    if obj is None or not isinstance(obj.get("tags"), list):
        return ReasoningTagSet(response_id, frozenset(), error="malformed_reply")
    got = {str(t).strip().lower() for t in obj["tags"]}
    known = set(taxonomy)
    return ReasoningTagSet(response_id, frozenset(got & known), frozenset(got - known))


def classify_reasoning(responses: Sequence[tuple[str, str]], endpoint: Endpoint | LlmEndpointConfig,
                       taxonomy_prompt: str | None = None,
                       max_in_flight: int = 1) -> tuple[list[ReasoningTagSet], dict[str, int]]:
    """Tag each ``(id, reasoning)`` pair with taxonomy classes; returns tag sets and a histogram.

    Replies naming tags outside the taxonomy are flagged; the response is kept.
    """
    if isinstance(endpoint, LlmEndpointConfig):
        endpoint = make_endpoint(endpoint)
    taxonomy = prompts.taxonomy_abbreviations(taxonomy_prompt)

    def one(item: tuple[str, str]) -> ReasoningTagSet:
        rid, text = item
        prompt = prompts.render_classify(text, taxonomy_prompt)
        try:
            raw = endpoint.complete([message("user", text_part(prompt))], temperature=0.0)
        except EndpointError as e:
            return ReasoningTagSet(rid, frozenset(), error=f"endpoint_error: {e}")
        return parse_tag_reply(rid, raw, taxonomy)

    results = map_bounded(one, list(responses), max_in_flight)
    hist = tag_histogram(results, taxonomy)
    return results, hist


def tag_histogram(results: Iterable[ReasoningTagSet], taxonomy: Sequence[str]) -> dict[str, int]:
    hist = {t: 0 for t in taxonomy}
    for r in results:
        for t in r.tags:
            hist[t] += 1
    return hist
