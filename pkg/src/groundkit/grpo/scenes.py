"""Synthetic grounding scenes for the toy policy.

A scene is a grid of cells, some holding elements with categorical
attributes. One element is the target. Each analytical perspective describes
the target through one attribute key; the perspective is *unique* in a scene
when no other element shares that key with the target, and *ambiguous*
otherwise.

A perspective's feature vector has one entry per cell: the match strength of
that cell's element with the description (0 for non-matching or empty
cells). Strengths of matching elements are drawn from
``[1 - jitter, 1]``, so a unique perspective yields a one-hot-like vector on
the target and an ambiguous one lights up several cells with different
strengths.

Randomness: scene ``i`` of stream ``s`` under seed ``seed`` is generated from
``numpy.random.default_rng([seed, s, i])``, so scenes can be built in any
order or in parallel and still be identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from groundkit.core import AUGMENTED, Perspective

N_PERSPECTIVES = len(AUGMENTED)
ATTRIBUTES = ("color_id", "icon_id", "text_id", "function_id", "region_id")

# Attribute key each perspective describes. Appearance needs colour and icon to agree.
PERSPECTIVE_KEYS: dict[Perspective, tuple[str, ...]] = {
    Perspective.APPEARANCE: ("color_id", "icon_id"),
    Perspective.FUNCTION: ("function_id",),
    Perspective.SPATIAL: ("region_id",),
    Perspective.GOAL: ("text_id",),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    n_scenes: int = 100
    grid_w: int = 4
    grid_h: int = 4
    ambiguity_profile: str = "mixed:0.3"
    n_elements: int = 8
    n_values: int = 6
    max_matches: int = 3
    jitter: float = 0.8

    def __post_init__(self):
        if self.grid_w < 2 or self.grid_h < 2:
            raise ConfigError("grid must be at least 2x2")
        if self.n_scenes < 1:
            raise ConfigError("n_scenes must be >= 1")
        if self.max_matches < 2:
            raise ConfigError("max_matches must be >= 2")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter must be in [0, 1)")
        if self.n_values < 2:
            raise ConfigError("n_values must be >= 2")
        parse_profile(self.ambiguity_profile)

    @property
    def n_cells(self) -> int:
        return self.grid_w * self.grid_h


@dataclass(frozen=True)
class Element:
    cell: tuple[int, int]
    attributes: dict[str, int]


@dataclass(frozen=True)
class SyntheticScene:
    grid_w: int
    grid_h: int
    elements: tuple[Element, ...]
    target_index: int
    # perspective -> per-cell match strength, length grid_w * grid_h
    instruction_features: dict[Perspective, tuple[float, ...]] = field(compare=False)

    @property
    def n_cells(self) -> int:
        return self.grid_w * self.grid_h

    @property
    def target_cell(self) -> int:
        return cell_index(self.elements[self.target_index].cell, self.grid_w)

    def match_counts(self) -> dict[Perspective, int]:
        t = self.elements[self.target_index]
        return {
            p: sum(_key(e, p) == _key(t, p) for e in self.elements)
            for p in AUGMENTED
        }

    def unique_perspectives(self) -> list[Perspective]:
        return [p for p, n in self.match_counts().items() if n == 1]

    def feature_matrix(self) -> np.ndarray:
        return np.array([self.instruction_features[p] for p in AUGMENTED], dtype=float)

    def to_json(self) -> dict[str, Any]:
        return {
            "grid_w": self.grid_w,
            "grid_h": self.grid_h,
            "elements": [{"cell": list(e.cell), "attributes": dict(e.attributes)} for e in self.elements],
            "target_index": self.target_index,
            "instruction_features": {p.value: list(self.instruction_features[p]) for p in AUGMENTED},
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "SyntheticScene":
        return cls(
            d["grid_w"], d["grid_h"],
            tuple(Element(tuple(e["cell"]), dict(e["attributes"])) for e in d["elements"]),
            d["target_index"],
            {Perspective.parse(k): tuple(v) for k, v in d["instruction_features"].items()},
        )


def cell_index(cell: Sequence[int], grid_w: int) -> int:
    col, row = cell
    return row * grid_w + col


def region_of(cell: Sequence[int], grid_w: int, grid_h: int) -> int:
    col, row = cell
    return (2 * row // grid_h) * 2 + (2 * col // grid_w)


def _key(e: Element, p: Perspective) -> tuple[int, ...]:
    return tuple(e.attributes[a] for a in PERSPECTIVE_KEYS[p])


def parse_profile(profile: str) -> tuple[str, Any]:
    """``all_unique``, ``one_unique``, ``unique_<perspective>_only`` or ``mixed:<p>``."""
    if profile in ("all_unique", "one_unique"):
        return profile, None
    if profile.startswith("mixed:"):
        try:
            p = float(profile.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad ambiguity profile {profile!r}") from None
        if not 0 <= p <= 1:
            raise ConfigError(f"mixed fraction must be in [0, 1], got {p}")
        return "mixed", p
    if profile.startswith("unique_") and profile.endswith("_only"):
        name = profile[len("unique_"):-len("_only")]
        try:
            persp = Perspective.parse(name)
        except ValueError:
            raise ConfigError(f"bad ambiguity profile {profile!r}") from None
        if persp is Perspective.ORIGINAL:
            raise ConfigError("the original instruction is not a scene perspective")
        return "only", persp
    raise ConfigError(f"unknown ambiguity profile {profile!r}")


def _draw_unique_set(profile: str, rng: np.random.Generator) -> set[Perspective]:
    kind, arg = parse_profile(profile)
    if kind == "all_unique":
        return set(AUGMENTED)
    if kind == "one_unique":
        return {AUGMENTED[rng.integers(N_PERSPECTIVES)]}
    if kind == "only":
        return {arg}
    k = int(rng.integers(2, N_PERSPECTIVES + 1)) if rng.random() < arg else 1
    return {AUGMENTED[i] for i in rng.choice(N_PERSPECTIVES, size=k, replace=False)}


def _other_value(v: int, n_values: int, rng: np.random.Generator) -> int:
    return int((v + 1 + rng.integers(n_values - 1)) % n_values)


def generate_scene(cfg: SceneConfig, rng: np.random.Generator) -> SyntheticScene:
    unique = _draw_unique_set(cfg.ambiguity_profile, rng)
    ambiguous = [p for p in AUGMENTED if p not in unique]
    w, h = cfg.grid_w, cfg.grid_h
    cells = [(c, r) for r in range(h) for c in range(w)]

    target_cell = cells[rng.integers(len(cells))]
    t_region = region_of(target_cell, w, h)
    in_region = [c for c in cells if region_of(c, w, h) == t_region and c != target_cell]
    out_region = [c for c in cells if region_of(c, w, h) != t_region]
    rng.shuffle(in_region)
    rng.shuffle(out_region)

    target = {a: int(rng.integers(cfg.n_values)) for a in ATTRIBUTES if a != "region_id"}

    def distinct_attrs(share: Perspective | None) -> dict[str, int]:
        # every described key differs from the target's except the shared one
        attrs = {}
        attrs["color_id"] = _other_value(target["color_id"], cfg.n_values, rng)
        attrs["icon_id"] = int(rng.integers(cfg.n_values))
        attrs["text_id"] = _other_value(target["text_id"], cfg.n_values, rng)
        attrs["function_id"] = _other_value(target["function_id"], cfg.n_values, rng)
        if share is not None and share is not Perspective.SPATIAL:
            for a in PERSPECTIVE_KEYS[share]:
                attrs[a] = target[a]
        return attrs

    placed: list[tuple[tuple[int, int], dict[str, int]]] = [(target_cell, target)]
    for p in ambiguous:
        n_extra = int(rng.integers(1, cfg.max_matches))
        for _ in range(n_extra):
            pool = in_region if p is Perspective.SPATIAL else out_region
            if not pool:
                raise ConfigError(f"grid {w}x{h} too small for an ambiguous {p.value} perspective")
            placed.append((pool.pop(), distinct_attrs(p)))
    while len(placed) < cfg.n_elements and out_region:
        placed.append((out_region.pop(), distinct_attrs(None)))

    order = rng.permutation(len(placed))
    elements = []
    for i in order:
        cell, attrs = placed[i]
        attrs = dict(attrs)
        attrs["region_id"] = region_of(cell, w, h)
        elements.append(Element(cell, {a: attrs[a] for a in ATTRIBUTES}))
    target_index = int(np.flatnonzero(order == 0)[0])

    t = elements[target_index]
    features = {}
    for p in AUGMENTED:
        vec = np.zeros(cfg.n_cells)
        for e in elements:
            if _key(e, p) == _key(t, p):
                vec[cell_index(e.cell, w)] = 1.0 - cfg.jitter * rng.random()
        features[p] = tuple(float(x) for x in np.round(vec, 6))
    return SyntheticScene(w, h, tuple(elements), target_index, features)


def gen_scenes(cfg: SceneConfig, seed: int, stream: int = 0) -> list[SyntheticScene]:
    return [generate_scene(cfg, np.random.default_rng([seed, stream, i])) for i in range(cfg.n_scenes)]


def check_scene(scene: SyntheticScene) -> list[str]:
    """Invariant violations, recomputed from element attributes (empty list when valid)."""
    problems = []
    cells = [e.cell for e in scene.elements]
    if len(set(cells)) != len(cells):
        problems.append("two elements share a cell")
    for c, r in cells:
        if not (0 <= c < scene.grid_w and 0 <= r < scene.grid_h):
            problems.append(f"cell {(c, r)} outside grid")
    if not 0 <= scene.target_index < len(scene.elements):
        problems.append("target index out of range")
        return problems
    t = scene.elements[scene.target_index]
    for p in AUGMENTED:
        vec = scene.instruction_features[p]
        matched = {cell_index(e.cell, scene.grid_w) for e in scene.elements if _key(e, p) == _key(t, p)}
        lit = {i for i, v in enumerate(vec) if v > 0}
        if lit != matched:
            problems.append(f"{p.value} features light {sorted(lit)} but matches are {sorted(matched)}")
        if not lit:
            problems.append(f"{p.value} features match no element")
    for e in scene.elements:
        if e.attributes["region_id"] != region_of(e.cell, scene.grid_w, scene.grid_h):
            problems.append(f"element at {e.cell} has inconsistent region")
    return problems


def dumps_scenes(scenes: Sequence[SyntheticScene]) -> str:
    return "".join(json.dumps(s.to_json(), sort_keys=True, separators=(",", ":")) + "\n" for s in scenes)
