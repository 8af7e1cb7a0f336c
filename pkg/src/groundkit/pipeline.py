"""Cleaning and augmentation pipeline for grounding samples.

Stages, per sample:

1. refine the ground-truth box against externally detected UI elements
   (IoU matching; unmatched samples are dropped),
2. verify the source instruction with the quality-evaluation prompt,
3. generate one instruction per analytical perspective,
4. verify each generated instruction and keep only those that pass.

Steps 2 to 4 send the screenshot with the ground truth drawn on it: a red
rectangle around the box and a blue hollow circle at its centre.
"""

from __future__ import annotations

import io
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

from PIL import Image, ImageDraw

from groundkit import prompts
from groundkit.core import AUGMENTED, BBox, GroundingSample, Instruction, Perspective, Point, iou
from groundkit.jsonl import JsonlWriter, iter_jsonl, write_json
from groundkit.llm import (
    Endpoint,
    EndpointError,
    LlmEndpointConfig,
    MalformedReply,
    image_part,
    make_endpoint,
    map_bounded,
    message,
    text_part,
)
from groundkit.replies import last_json_object

log = logging.getLogger(__name__)

BOX_COLOR = (255, 0, 0)
BOX_WIDTH = 3
POINT_COLOR = (0, 0, 255)
POINT_RADIUS = 8
POINT_WIDTH = 2


class InvalidThreshold(ValueError):
    pass


@dataclass(frozen=True)
class DetectedElement:
    bbox: BBox
    label: str | None = None
    confidence: float | None = None

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "DetectedElement":
        return cls(BBox.from_list(d["bbox"]), d.get("label"), d.get("confidence"))


@dataclass(frozen=True)
class Refined:
    new_bbox: BBox
    matched_iou: float


@dataclass(frozen=True)
class Kept:
    matched_iou: float


@dataclass(frozen=True)
class Dropped:
    best_iou: float


RefineOutcome = Union[Refined, Kept, Dropped]


def refine_gt(sample: GroundingSample, detections: Sequence[DetectedElement],
              threshold: float = 0.5) -> RefineOutcome:
    """Match the ground-truth box to its best-overlapping detection.

    Ties on IoU go to the smaller detection, then to the lexicographically
    smaller box. Detections that do not fit the screenshot are ignored.
    """
    if not 0 < threshold <= 1:
        raise InvalidThreshold(f"threshold must be in (0, 1], got {threshold}")
    gt = sample.gt_bbox
    shot = sample.screenshot
    scored = [
        (iou(gt, d.bbox), d.bbox)
        for d in detections
        if d.bbox.fits(shot.width, shot.height)
    ]
    if not scored:
        return Dropped(0.0)
    best_iou, best = min(scored, key=lambda s: (-s[0], s[1].area, s[1].as_list()))
    if best_iou < threshold:
        return Dropped(best_iou)
    if best == gt:
        return Kept(best_iou)
    return Refined(best, best_iou)


def refined_bbox(sample: GroundingSample, outcome: RefineOutcome) -> BBox | None:
    if isinstance(outcome, Refined):
        return outcome.new_bbox
    if isinstance(outcome, Kept):
        return sample.gt_bbox
    return None


def load_detections(path: str | Path) -> dict[str, list[DetectedElement]]:
    index: dict[str, list[DetectedElement]] = {}
    for rec in iter_jsonl(path):
        index.setdefault(str(rec["screenshot_id"]), []).extend(
            DetectedElement.from_json(e) for e in rec.get("elements", [])
        )
    return index


def load_samples(path: str | Path) -> list[GroundingSample]:
    return [GroundingSample.from_json(r) for r in iter_jsonl(path)]


# ---------------------------------------------------------------- overlay


def load_image(image_ref: str, image_root: str | Path | None = None) -> Image.Image:
    path = Path(image_ref)
    if image_root is not None and not path.is_absolute():
        path = Path(image_root) / path
    with Image.open(path) as im:
        return im.convert("RGB")


def render_overlay(image: Image.Image, bbox: BBox) -> bytes:
    """PNG bytes of a copy of ``image`` with the ground-truth markers drawn in."""
    im = image.copy()
    draw = ImageDraw.Draw(im)
    draw.rectangle(bbox.as_list(), outline=BOX_COLOR, width=BOX_WIDTH)
    c = bbox.center()
    r = POINT_RADIUS
    draw.ellipse([c.x - r, c.y - r, c.x + r, c.y + r], outline=POINT_COLOR, width=POINT_WIDTH)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def _endpoint(client: Endpoint | LlmEndpointConfig) -> Endpoint:
    return make_endpoint(client) if isinstance(client, LlmEndpointConfig) else client


def _overlay_for(sample: GroundingSample, image_root=None) -> bytes:
    return render_overlay(load_image(sample.screenshot.image_ref, image_root), sample.gt_bbox)


# ----------------------------------------------------------- augmentation

_TRANSLATION_KEYS = ("translation", "chinese_translation", "translated_instruction", "chinese", "zh")


def _flatten(obj: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for k, v in obj.items():
        if isinstance(v, Mapping):
            flat.update(_flatten(v))
        else:
            flat[k] = v
    return flat


def parse_augment_reply(raw: str) -> tuple[dict[Perspective, str], str | None]:
    """Four perspective texts plus the (unused downstream) translation."""
    obj = last_json_object(raw)
    if obj is None:
        raise MalformedReply("no JSON object in augmentation reply")
    texts: dict[Perspective, str] = {}
    translation = None
    for key, val in _flatten(obj).items():
        norm = key.strip().lower().replace(" ", "_")
        if any(norm.endswith(t) for t in _TRANSLATION_KEYS):
            translation = str(val)
            continue
        norm = norm.removesuffix("_instruction")
        try:
            p = Perspective.parse(norm)
        except ValueError:
            continue
        if p is Perspective.ORIGINAL or not isinstance(val, str) or not val.strip():
            continue
        texts.setdefault(p, val.strip())
    missing = [p.value for p in AUGMENTED if p not in texts]
    if missing:
        raise MalformedReply(f"augmentation reply lacks {', '.join(missing)}")
    return {p: texts[p] for p in AUGMENTED}, translation


def _augment_raw(sample: GroundingSample, endpoint: Endpoint, overlay: bytes,
                 annotation_type: str) -> str:
    prompt = prompts.render_augment(sample.instructions[Perspective.ORIGINAL], annotation_type)
    return endpoint.complete([message("user", image_part(overlay), text_part(prompt))])


def augment_instructions(sample: GroundingSample, client: Endpoint | LlmEndpointConfig,
                         annotation_type: str = "bounding box", image_root=None,
                         overlay: bytes | None = None) -> dict[Perspective, str]:
    overlay = overlay if overlay is not None else _overlay_for(sample, image_root)
    raw = _augment_raw(sample, _endpoint(client), overlay, annotation_type)
    return parse_augment_reply(raw)[0]


# ----------------------------------------------------------- verification


@dataclass(frozen=True)
class VerificationResult:
    is_unique: bool
    bbox_ok: bool
    instruction_reasoning: str
    bbox_reasoning: str
    raw_response: str

    @property
    def passed(self) -> bool:
        return self.is_unique and self.bbox_ok

    def to_json(self) -> dict[str, Any]:
        return {
            "is_unique": self.is_unique,
            "bbox_ok": self.bbox_ok,
            "instruction_reasoning": self.instruction_reasoning,
            "bbox_reasoning": self.bbox_reasoning,
            "raw_response": self.raw_response,
        }


def parse_verification(raw: str) -> VerificationResult:
    obj = last_json_object(raw)
    if obj is None:
        raise MalformedReply("no terminal JSON object in verification reply")
    ins = obj.get("instruction_evaluation")
    box = obj.get("bbox_evaluation")
    if not isinstance(ins, dict) or not isinstance(box, dict):
        raise MalformedReply("verification JSON lacks instruction_evaluation or bbox_evaluation")
    unique, sized = ins.get("is_unique"), box.get("is_appropriately_sized")
    if not isinstance(unique, bool) or not isinstance(sized, bool):
        raise MalformedReply("verification booleans missing or not boolean")
    return VerificationResult(unique, sized, str(ins.get("reasoning", "")),
                              str(box.get("reasoning", "")), raw)


def verify_instruction(sample: GroundingSample, instruction: Instruction,
                       client: Endpoint | LlmEndpointConfig, image_root=None,
                       overlay: bytes | None = None) -> VerificationResult:
    overlay = overlay if overlay is not None else _overlay_for(sample, image_root)
    prompt = prompts.render_verify(instruction.text)
    raw = _endpoint(client).complete([message("user", image_part(overlay), text_part(prompt))])
    return parse_verification(raw)


# ---------------------------------------------------------------- driver


@dataclass
class PipelineConfig:
    iou_threshold: float = 0.5
    annotation_type: str = "bounding box"
    verify_original: bool = True
    image_root: str | None = None
    max_in_flight: int = 4


@dataclass
class PipelineReport:
    input: int = 0
    dropped_refine: int = 0
    augment_failures: int = 0
    verify_rejections: int = 0
    fully_rejected: int = 0
    emitted: int = 0
    refined: int = 0
    kept: int = 0
    generated: dict[str, int] = field(default_factory=lambda: {p.value: 0 for p in AUGMENTED})
    passed: dict[str, int] = field(default_factory=lambda: {p.value: 0 for p in AUGMENTED})
    outcomes: list["_Outcome"] = field(default_factory=list, repr=False, compare=False)

    @property
    def retention(self) -> dict[str, float]:
        return {k: (self.passed[k] / n if n else 0.0) for k, n in self.generated.items()}

    def conserved(self) -> bool:
        return self.input == self.emitted + self.dropped_refine + self.augment_failures + self.fully_rejected

    def to_json(self) -> dict[str, Any]:
        return {
            "input": self.input,
            "dropped_refine": self.dropped_refine,
            "augment_failures": self.augment_failures,
            "verify_rejections": self.verify_rejections,
            "fully_rejected": self.fully_rejected,
            "emitted": self.emitted,
            "refined": self.refined,
            "kept": self.kept,
            "per_perspective": {
                k: {"generated": self.generated[k], "passed": self.passed[k], "retention": self.retention[k]}
                for k in self.generated
            },
        }


@dataclass
class _Outcome:
    sample: GroundingSample | None = None
    reject: dict[str, str] | None = None
    stage: str = ""
    refine: RefineOutcome | None = None
    generated: list[Perspective] = field(default_factory=list)
    passed: list[Perspective] = field(default_factory=list)
    rejections: int = 0


def process_sample(sample: GroundingSample, detections: Sequence[DetectedElement],
                   endpoint: Endpoint, config: PipelineConfig) -> _Outcome:
    out = _Outcome()
    outcome = refine_gt(sample, detections, config.iou_threshold)
    out.refine = outcome
    box = refined_bbox(sample, outcome)
    if box is None:
        out.stage = "refine"
        out.reject = {"id": sample.id, "stage": "refine",
                      "reason": f"best_iou={outcome.best_iou:.6f} below {config.iou_threshold}"}
        return out
    sample = sample.replace(gt_bbox=box)

    try:
        overlay = _overlay_for(sample, config.image_root)
    except OSError as e:
        out.stage = "augment"
        out.reject = {"id": sample.id, "stage": "augment", "reason": f"image: {e}"}
        return out

    verdicts: dict[str, dict] = {}
    if config.verify_original:
        try:
            v = verify_instruction(sample, sample.instruction(), endpoint, overlay=overlay)
        except (EndpointError, MalformedReply) as e:
            out.stage = "verify"
            out.rejections = 1
            out.reject = {"id": sample.id, "stage": "verify", "reason": f"original: {e}"}
            return out
        if not v.passed:
            out.stage = "verify"
            out.rejections = 1
            out.reject = {"id": sample.id, "stage": "verify", "reason": "original instruction rejected"}
            return out
        verdicts[Perspective.ORIGINAL.value] = v.to_json()

    try:
        raw = _augment_raw(sample, endpoint, overlay, config.annotation_type)
        texts, translation = parse_augment_reply(raw)
    except (EndpointError, MalformedReply) as e:
        out.stage = "augment"
        out.reject = {"id": sample.id, "stage": "augment", "reason": f"{type(e).__name__}: {e}"}
        return out

    kept_texts: dict[Perspective, str] = {}
    for p, text in texts.items():
        out.generated.append(p)
        try:
            v = verify_instruction(sample, Instruction(text, p), endpoint, overlay=overlay)
        except (EndpointError, MalformedReply) as e:
            log.info("verification of %s/%s failed: %s", sample.id, p.value, e)
            out.rejections += 1
            continue
        if v.passed:
            kept_texts[p] = text
            out.passed.append(p)
            verdicts[p.value] = v.to_json()
        else:
            out.rejections += 1

    if not kept_texts:
        out.stage = "verify"
        out.reject = {"id": sample.id, "stage": "verify", "reason": "no generated instruction passed"}
        return out

    extra = dict(sample.extra)
    extra["verification"] = verdicts
    extra["refine"] = {"outcome": type(outcome).__name__.lower(), "iou": outcome.matched_iou}
    if translation is not None:
        extra["translation_zh"] = translation
    out.sample = sample.replace(instructions={**sample.instructions, **kept_texts}, extra=extra)
    out.stage = "emitted"
    return out


def run_pipeline(samples: Iterable[GroundingSample], detections: Mapping[str, Sequence[DetectedElement]],
                 endpoint: Endpoint | LlmEndpointConfig, config: PipelineConfig | None = None,
                 out_dir: str | Path | None = None) -> PipelineReport:
    """Run every stage over ``samples``; outputs are written in input order.

    Files written to ``out_dir``: ``samples.jsonl`` (emitted samples),
    ``rejects.jsonl`` and ``report.json``.
    """
    config = config or PipelineConfig()
    endpoint = _endpoint(endpoint)
    samples = list(samples)

    outcomes = map_bounded(
        lambda s: process_sample(s, detections.get(s.screenshot.id, ()), endpoint, config),
        samples,
        config.max_in_flight,
    )

    report = PipelineReport(input=len(samples))
    for o in outcomes:
        report.verify_rejections += o.rejections
        if isinstance(o.refine, Refined):
            report.refined += 1
        elif isinstance(o.refine, Kept):
            report.kept += 1
        for p in o.generated:
            report.generated[p.value] += 1
        for p in o.passed:
            report.passed[p.value] += 1
        if o.stage == "refine":
            report.dropped_refine += 1
        elif o.stage == "augment":
            report.augment_failures += 1
        elif o.stage == "verify":
            report.fully_rejected += 1
        else:
            report.emitted += 1

    if out_dir is not None:
        out_dir = Path(out_dir)
        with JsonlWriter(out_dir / "samples.jsonl") as good, JsonlWriter(out_dir / "rejects.jsonl") as bad:
            for o in outcomes:
                if o.sample is not None:
                    good.write(o.sample.to_json())
                else:
                    bad.write(o.reject)
        write_json(out_dir / "report.json", report.to_json())
    report.outcomes = outcomes
    return report


def emitted_samples(report: PipelineReport) -> list[GroundingSample]:
    return [o.sample for o in report.outcomes if o.sample is not None]


# ---------------------------------------------------------------- corpora


def _fmt_coord(v: float) -> int | float:
    return int(v) if float(v).is_integer() else round(v, 2)


@dataclass(frozen=True)
class SftExample:
    sample_id: str
    image_ref: str
    instruction_perspective: Perspective
    instruction_text: str
    reasoning_perspective: Perspective
    reasoning_text: str
    gt_point: Point
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.instruction_perspective == self.reasoning_perspective:
            raise ValueError("instruction and reasoning perspectives must differ")

    def target_text(self) -> str:
        """Assistant turn: perspective reasoning, then the click tool call."""
        label = self.reasoning_perspective.value.capitalize() + "-Based"
        coord = [_fmt_coord(self.gt_point.x), _fmt_coord(self.gt_point.y)]
        return (
            "<think>\n"
            f"I will analyze this instruction from {label} perspective, the user's instruction "
            f"can be represented as : {self.reasoning_text}\n"
            "</think>\n"
            "<tool_call>\n"
            '{"name":"grounding","arguments":{"action":"click","coordinate":'
            f"[{coord[0]},{coord[1]}]" "}}\n"
            "</tool_call>"
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "image_ref": self.image_ref,
            "width": self.width,
            "height": self.height,
            "instruction_perspective": self.instruction_perspective.value,
            "instruction_text": self.instruction_text,
            "reasoning_perspective": self.reasoning_perspective.value,
            "reasoning_text": self.reasoning_text,
            "gt_point": self.gt_point.as_list(),
            "target": self.target_text(),
        }


@dataclass(frozen=True)
class RlExample:
    sample_id: str
    image_ref: str
    instruction_text: str
    instruction_perspective: Perspective
    gt_bbox: BBox
    width: int = 0
    height: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "image_ref": self.image_ref,
            "width": self.width,
            "height": self.height,
            "instruction_text": self.instruction_text,
            "instruction_perspective": self.instruction_perspective.value,
            "gt_bbox": self.gt_bbox.as_list(),
        }


def build_sft_corpus(samples: Iterable[GroundingSample], rng_seed: int) -> tuple[list[SftExample], int]:
    """One example per sample from a uniformly drawn ordered pair of distinct perspectives.

    Returns ``(examples, skipped)``; samples with fewer than two augmented
    perspectives are skipped.
    """
    rng = random.Random(rng_seed)
    examples, skipped = [], 0
    for s in samples:
        avail = s.augmented_perspectives
        if len(avail) < 2:
            skipped += 1
            continue
        ins, rea = rng.sample(avail, 2)
        examples.append(SftExample(
            sample_id=s.id,
            image_ref=s.screenshot.image_ref,
            instruction_perspective=ins,
            instruction_text=s.instructions[ins],
            reasoning_perspective=rea,
            reasoning_text=s.instructions[rea],
            gt_point=s.gt_bbox.center(),
            width=s.screenshot.width,
            height=s.screenshot.height,
        ))
    return examples, skipped


def build_rl_corpus(samples: Iterable[GroundingSample]) -> list[RlExample]:
    return [
        RlExample(s.id, s.screenshot.image_ref, s.instructions[p], p, s.gt_bbox,
                  s.screenshot.width, s.screenshot.height)
        for s in samples
        for p in s.augmented_perspectives
    ]
