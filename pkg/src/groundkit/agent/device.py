"""Device contract and a scriptable in-memory device for tests and simulation.

Scenario file (JSON)::

    {
      "start": "home",
      "home": "home",
      "width": 1080, "height": 2400,
      "state": {"wifi": false},
      "apps": {"Settings": "settings"},
      "screens": [
        {"screen": "home",
         "regions": [{"name": "settings icon", "bbox": [0, 0, 100, 100], "on_tap": "settings"}],
         "on_swipe": {"up": "home_page_2"}}
      ],
      "success_predicate": {"screen": "settings", "state": {"wifi": true}}
    }

Region keys: ``on_tap`` / ``on_long_press`` name the next screen, ``toggle``
flips a boolean in ``state``, ``set`` assigns values into it. Taps outside
every region are recorded and do nothing.
"""

from __future__ import annotations

import copy
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol

from PIL import Image, ImageDraw

from groundkit.core import BBox, Point, Screenshot, point_in_box

# Finger movement for a swipe; a scroll maps to the opposite finger direction.
SWIPE_DIRECTIONS = ("up", "down", "left", "right")
INVERSE = {"up": "down", "down": "up", "left": "right", "right": "left"}


class DeviceError(RuntimeError):
    pass


class DeviceAdapter(Protocol):
    def screenshot(self) -> Screenshot: ...
    def screenshot_png(self) -> bytes: ...
    def tap(self, point: Point) -> None: ...
    def long_press(self, point: Point) -> None: ...
    def type_text(self, text: str) -> None: ...
    def key_home(self) -> None: ...
    def key_back(self) -> None: ...
    def swipe(self, direction: str) -> None: ...
    def open_app(self, name: str) -> None: ...


@dataclass(frozen=True)
class Region:
    name: str
    bbox: BBox
    on_tap: str | None = None
    on_long_press: str | None = None
    toggle: str | None = None
    set: Mapping[str, Any] | None = None


@dataclass(frozen=True)
class Screen:
    id: str
    regions: tuple[Region, ...]
    on_swipe: Mapping[str, str]


class MockDevice:
    """In-memory device driven by a scenario; records every action it receives."""

    def __init__(self, scenario: Mapping[str, Any]):
        self.scenario = copy.deepcopy(dict(scenario))
        self.width = int(scenario.get("width", 1080))
        self.height = int(scenario.get("height", 2400))
        self.screens: dict[str, Screen] = {}
        for s in scenario["screens"]:
            regions = tuple(
                Region(r["name"], BBox.from_list(r["bbox"]), r.get("on_tap"), r.get("on_long_press"),
                       r.get("toggle"), r.get("set"))
                for r in s.get("regions", [])
            )
            self.screens[s["screen"]] = Screen(s["screen"], regions, dict(s.get("on_swipe", {})))
        self.home = scenario.get("home", scenario["screens"][0]["screen"])
        self.apps: dict[str, str] = dict(scenario.get("apps", {}))
        self.predicate: Mapping[str, Any] = scenario.get("success_predicate", {})
        for target in [self.home, scenario.get("start", self.home), *self.apps.values()]:
            self._check_screen(target)
        self.current = scenario.get("start", self.home)
        self.back_stack: list[str] = []
        self.state: dict[str, Any] = dict(scenario.get("state", {}))
        self.fields: dict[str, str] = {}
        self.focused: str | None = None
        self.calls: list[list[Any]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockDevice":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def fresh(self) -> "MockDevice":
        return MockDevice(self.scenario)

    def _check_screen(self, sid: str) -> None:
        if sid not in self.screens:
            raise DeviceError(f"scenario references unknown screen {sid!r}")

    def _go(self, sid: str) -> None:
        self._check_screen(sid)
        if sid != self.current:
            self.back_stack.append(self.current)
            self.current = sid
            self.focused = None

    def _hit(self, point: Point) -> Region | None:
        for r in self.screens[self.current].regions:
            if point_in_box(point, r.bbox):
                return r
        return None

    # --- observation

    def screenshot(self) -> Screenshot:
        return Screenshot(self.current, self.width, self.height, f"mock://{self.current}")

    def screenshot_png(self) -> bytes:
        """A schematic rendering: each region as a labelled outline."""
        scale = 0.25
        img = Image.new("RGB", (max(1, int(self.width * scale)), max(1, int(self.height * scale))), "white")
        draw = ImageDraw.Draw(img)
        for r in self.screens[self.current].regions:
            box = [v * scale for v in r.bbox.as_list()]
            draw.rectangle(box, outline="black", width=2)
            draw.text((box[0] + 3, box[1] + 3), r.name, fill="black")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    def regions(self) -> tuple[Region, ...]:
        return self.screens[self.current].regions

    # --- actions

    def tap(self, point: Point) -> None:
        self.calls.append(["tap", point.x, point.y])
        r = self._hit(point)
        if r is None:
            return
        if r.toggle:
            self.state[r.toggle] = not bool(self.state.get(r.toggle, False))
        if r.set:
            self.state.update(r.set)
        self.focused = r.name
        if r.on_tap:
            self._go(r.on_tap)

    def long_press(self, point: Point) -> None:
        self.calls.append(["long_press", point.x, point.y])
        r = self._hit(point)
        if r is not None and r.on_long_press:
            self._go(r.on_long_press)

    def type_text(self, text: str) -> None:
        self.calls.append(["type_text", text])
        key = f"{self.current}/{self.focused}" if self.focused else self.current
        self.fields[key] = self.fields.get(key, "") + text

    def key_home(self) -> None:
        self.calls.append(["key_home"])
        self.back_stack.clear()
        self.current = self.home
        self.focused = None

    def key_back(self) -> None:
        self.calls.append(["key_back"])
        if self.back_stack:
            self.current = self.back_stack.pop()
            self.focused = None

    def swipe(self, direction: str) -> None:
        if direction not in SWIPE_DIRECTIONS:
            raise DeviceError(f"bad swipe direction {direction!r}")
        self.calls.append(["swipe", direction])
        nxt = self.screens[self.current].on_swipe.get(direction)
        if nxt:
            self._go(nxt)

    def open_app(self, name: str) -> None:
        self.calls.append(["open_app", name])
        if name not in self.apps:
            raise DeviceError(f"app {name!r} is not installed")
        self._go(self.apps[name])

    # --- bookkeeping

    def state_snapshot(self) -> dict[str, Any]:
        return {
            "screen": self.current,
            "back_stack": list(self.back_stack),
            "state": dict(sorted(self.state.items())),
            "fields": dict(sorted(self.fields.items())),
            "calls": [list(c) for c in self.calls],
        }

    def success(self) -> bool:
        p = self.predicate
        if not p:
            return False
        if "screen" in p and p["screen"] != self.current:
            return False
        return all(self.state.get(k) == v for k, v in p.get("state", {}).items()) and all(
            self.fields.get(k) == v for k, v in p.get("fields", {}).items()
        )
