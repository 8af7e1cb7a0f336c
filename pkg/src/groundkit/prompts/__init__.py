"""Versioned prompt assets and their renderers.

Templates contain literal JSON braces, so placeholders are substituted by
plain string replacement instead of ``str.format``.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Sequence

AUGMENT = "augment_v1"
VERIFY = "verify_v1"
GROUND_SFT = "ground_sft"
GROUND_RL = "ground_rl"
PLANNER = "planner"
TAXONOMY = "taxonomy"
CLASSIFY = "classify_v1"

GROUND_TEMPLATES = {"sft": GROUND_SFT, "rl": GROUND_RL}

# Applications available to the planner in the AndroidWorld setup.
ANDROID_WORLD_APPS: tuple[str, ...] = (
    "Camera", "Chrome", "Clock", "Contacts", "Dialer", "Files", "Settings",
    "Markor", "Tasks", "Simple Draw Pro", "Simple Gallery Pro", "Simple SMS Messenger",
    "Audio Recorder", "Pro Expense", "Broccoli APP", "OSMand", "VLC", "Joplin",
    "Retro Music", "OpenTracks", "Simple Calendar Pro",
)


@lru_cache(maxsize=None)
def load(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def _fill(template: str, values: dict[str, str]) -> str:
    # single pass, so placeholder-like text inside a value is never re-expanded
    pattern = re.compile("|".join(re.escape(k) for k in values))
    return pattern.sub(lambda m: values[m.group(0)], template)


def render_augment(instruction: str, annotation_type: str = "bounding box") -> str:
    return _fill(load(AUGMENT), {"<annotation_type>": annotation_type, "<instruction_here>": instruction})


def render_verify(instruction: str) -> str:
    return _fill(load(VERIFY), {"<instruction_here>": instruction})


def render_ground_system(template_id: str, width: int, height: int) -> str:
    try:
        name = GROUND_TEMPLATES[template_id]
    except KeyError:
        raise ValueError(f"unknown grounding template {template_id!r}; expected sft or rl") from None
    return _fill(load(name), {"{height}": str(height), "{width}": str(width)})


def render_classify(response: str, taxonomy: str | None = None) -> str:
    return _fill(load(CLASSIFY), {"<taxonomy>": taxonomy or load(TAXONOMY), "<response_here>": response})


def render_planner(goal: str, history: Sequence[str], apps: Sequence[str]) -> str:
    if not apps:
        raise ValueError("planner needs at least one available app")
    return _fill(load(PLANNER), {
        "{goal}": goal,
        "{history}": json.dumps(list(history), ensure_ascii=False),
        "{apps}": json.dumps(list(apps), ensure_ascii=False, separators=(",", ":")),
    })


def taxonomy_abbreviations(taxonomy: str | None = None) -> list[str]:
    text = taxonomy or load(TAXONOMY)
    return [line.split(":", 1)[1].strip() for line in text.splitlines() if line.startswith("Abbreviation:")]
