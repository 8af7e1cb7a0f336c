"""Tooling for GUI grounding: data cleaning, evaluation, toy GRPO, agent loop."""

__version__ = "0.1.0"

from groundkit.core import (
    BBox,
    GroundingSample,
    Instruction,
    Perspective,
    Point,
    Screenshot,
    iou,
    point_in_box,
)

__all__ = [
    "BBox",
    "GroundingSample",
    "Instruction",
    "Perspective",
    "Point",
    "Screenshot",
    "iou",
    "point_in_box",
    "__version__",
]
