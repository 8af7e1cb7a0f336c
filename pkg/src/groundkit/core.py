"""Geometry and sample types shared by every other module.

Coordinates are pixels with the origin at the top-left corner, x growing to
the right and y growing downward. Everything here is an immutable value.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping


class Perspective(str, enum.Enum):
    ORIGINAL = "original"
    APPEARANCE = "appearance"
    FUNCTION = "function"
    SPATIAL = "spatial"
    GOAL = "goal"

    @classmethod
    def parse(cls, name: str) -> "Perspective":
        key = name.strip().lower().replace("_", "-")
        key = key.removesuffix("-based").removesuffix(" perspective")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown perspective {name!r}") from None

    def __str__(self) -> str:
        return self.value


_ALIASES = {
    "functionality": "function",
    "functional": "function",
    "location": "spatial",
    "intent": "goal",
}

# The four analytical perspectives produced by augmentation, in canonical order.
AUGMENTED: tuple[Perspective, ...] = (
    Perspective.APPEARANCE,
    Perspective.FUNCTION,
    Perspective.SPATIAL,
    Perspective.GOAL,
)


def _check_coord(name: str, v: float) -> float:
    v = float(v)
    if not math.isfinite(v) or v < 0:
        raise ValueError(f"{name} must be finite and non-negative, got {v}")
    return v


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", _check_coord("x", self.x))
        object.__setattr__(self, "y", _check_coord("y", self.y))

    def as_list(self) -> list[float]:
        return [self.x, self.y]


@dataclass(frozen=True, order=True)
class BBox:
    x_l: float
    y_l: float
    x_r: float
    y_r: float

    def __post_init__(self):
        for name in ("x_l", "y_l", "x_r", "y_r"):
            object.__setattr__(self, name, _check_coord(name, getattr(self, name)))
        if self.x_l > self.x_r or self.y_l > self.y_r:
            raise ValueError(f"inverted box {self.as_list()}")

    @classmethod
    def from_list(cls, xs: Iterable[float]) -> "BBox":
        xs = list(xs)
        if len(xs) != 4:
            raise ValueError(f"bbox needs 4 numbers, got {xs!r}")
        return cls(*xs)

    @property
    def width(self) -> float:
        return self.x_r - self.x_l

    @property
    def height(self) -> float:
        return self.y_r - self.y_l

    @property
    def area(self) -> float:
        return self.width * self.height

    def center(self) -> Point:
        return Point((self.x_l + self.x_r) / 2, (self.y_l + self.y_r) / 2)

    def contains(self, other: "BBox") -> bool:
        return (
            self.x_l <= other.x_l
            and self.y_l <= other.y_l
            and other.x_r <= self.x_r
            and other.y_r <= self.y_r
        )

    def fits(self, width: float, height: float) -> bool:
        return self.x_r <= width and self.y_r <= height

    def as_list(self) -> list[float]:
        return [self.x_l, self.y_l, self.x_r, self.y_r]


def point_in_box(p: Point, b: BBox) -> bool:
    """Closed-box containment: points on the border count as inside."""
    return b.x_l <= p.x <= b.x_r and b.y_l <= p.y <= b.y_r


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_r, b.x_r) - max(a.x_l, b.x_l)
    ih = min(a.y_r, b.y_r) - max(a.y_l, b.y_l)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class Screenshot:
    id: str
    width: int
    height: int
    image_ref: str = ""

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"screenshot {self.id!r} has non-positive size")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "width": self.width, "height": self.height, "image_ref": self.image_ref}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "Screenshot":
        return cls(str(d["id"]), d["width"], d["height"], d.get("image_ref", ""))


@dataclass(frozen=True)
class Instruction:
    text: str
    perspective: Perspective = Perspective.ORIGINAL

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("instruction text is empty")


_SAMPLE_KEYS = ("id", "screenshot", "gt_bbox", "instructions", "source", "tags")


@dataclass(frozen=True)
class GroundingSample:
    id: str
    screenshot: Screenshot
    gt_bbox: BBox
    instructions: Mapping[Perspective, str]
    source: str = ""
    tags: frozenset[str] = frozenset()
    # Unknown JSONL fields, carried through untouched.
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        instr = {Perspective.parse(k) if isinstance(k, str) else k: v for k, v in self.instructions.items()}
        if Perspective.ORIGINAL not in instr:
            raise ValueError(f"sample {self.id!r} has no original instruction")
        for k, v in instr.items():
            if not isinstance(v, str) or not v.strip():
                raise ValueError(f"sample {self.id!r}: empty {k} instruction")
        if not self.gt_bbox.fits(self.screenshot.width, self.screenshot.height):
            raise ValueError(f"sample {self.id!r}: gt_bbox exceeds screenshot bounds")
        object.__setattr__(self, "instructions", instr)
        object.__setattr__(self, "tags", frozenset(self.tags))

    def instruction(self, perspective: Perspective = Perspective.ORIGINAL) -> Instruction:
        return Instruction(self.instructions[perspective], perspective)

    @property
    def augmented_perspectives(self) -> list[Perspective]:
        return [p for p in AUGMENTED if p in self.instructions]

    def tag_value(self, dimension: str) -> str | None:
        """Value of a ``dimension:value`` tag, or None if the sample lacks it."""
        prefix = dimension + ":"
        for t in sorted(self.tags):
            if t.startswith(prefix):
                return t[len(prefix):]
        return None

    def replace(self, **changes) -> "GroundingSample":
        d = {
            "id": self.id,
            "screenshot": self.screenshot,
            "gt_bbox": self.gt_bbox,
            "instructions": dict(self.instructions),
            "source": self.source,
            "tags": self.tags,
            "extra": dict(self.extra),
        }
        d.update(changes)
        return GroundingSample(**d)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "screenshot": self.screenshot.to_json(),
            "gt_bbox": self.gt_bbox.as_list(),
            "instructions": {p.value: self.instructions[p] for p in Perspective if p in self.instructions},
            "source": self.source,
            "tags": sorted(self.tags),
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "GroundingSample":
        return cls(
            id=str(d["id"]),
            screenshot=Screenshot.from_json(d["screenshot"]),
            gt_bbox=BBox.from_list(d["gt_bbox"]),
            instructions={Perspective.parse(k): v for k, v in d["instructions"].items()},
            source=d.get("source", ""),
            tags=frozenset(d.get("tags", ())),
            extra={k: v for k, v in d.items() if k not in _SAMPLE_KEYS},
        )
