"""Planner/executor perception-action loop.

Each step: screenshot, render the planner prompt, ask the planner for one
turn, parse it, execute it on the device, append the outcome to history.
Element descriptions in click / long_press / input_text are resolved to
screen points by a grounding executor.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from groundkit import prompts
from groundkit.agent.actions import (
    AgentAction,
    Answer,
    Click,
    InputText,
    LongPress,
    MalformedTurn,
    NavigateBack,
    NavigateHome,
    OpenApp,
    PlannerTurn,
    Scroll,
    Status,
    Wait,
    action_from_json,
    parse_planner_turn,
)
from groundkit.agent.device import INVERSE, DeviceAdapter, DeviceError
from groundkit.core import Instruction, Point, Screenshot
from groundkit.jsonl import JsonlWriter
from groundkit.llm import Endpoint, EndpointError, LlmEndpointConfig, image_part, make_endpoint, message, text_part

log = logging.getLogger(__name__)

DEFAULT_WAIT_SECONDS = 2.0
MALFORMED_BUDGET = 2


class Executor(Protocol):
    def locate(self, target: str, shot: Screenshot, device: DeviceAdapter) -> Point | None: ...


class GroundingExecutor:
    """Resolves element descriptions with a grounding model, using the RL-style think prompt."""

    def __init__(self, endpoint: Endpoint | LlmEndpointConfig, template_id: str = "rl", scale: float = 1.0):
        self.endpoint = make_endpoint(endpoint) if isinstance(endpoint, LlmEndpointConfig) else endpoint
        self.template_id = template_id
        self.scale = scale

    def locate(self, target: str, shot: Screenshot, device: DeviceAdapter) -> Point | None:
        from groundkit.evaluator import ground_on

        pred = ground_on(shot, Instruction(target), self.template_id, self.endpoint,
                         device.screenshot_png(), scale=self.scale)
        if pred.parsed_point is None:
            log.info("grounding failed for %r: %s", target, pred.fail_reason)
        return pred.parsed_point


class RegionExecutor:
    """Mock executor for :class:`MockDevice`: matches the target against region names."""

    def locate(self, target: str, shot: Screenshot, device: DeviceAdapter) -> Point | None:
        t = target.strip().lower()
        regions = device.regions()
        for exact in (True, False):
            for r in regions:
                name = r.name.lower()
                if (name == t) if exact else (name in t or t in name):
                    return r.bbox.center()
        return None


class FixedExecutor:
    """Returns preset points in order (or one point forever); None entries simulate failures."""

    def __init__(self, points: Point | Sequence[Point | None]):
        self.points = [points] if isinstance(points, Point) else list(points)
        self.repeat = isinstance(points, Point)

    def locate(self, target: str, shot: Screenshot, device: DeviceAdapter) -> Point | None:
        if self.repeat:
            return self.points[0]
        if not self.points:
            return None
        return self.points.pop(0)


@dataclass
class ExecutionResult:
    ok: bool
    detail: str
    new_screen: Screenshot | None = None
    point: Point | None = None
    terminal: bool = False
    answer: str | None = None

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"ok": self.ok, "detail": self.detail}
        if self.point is not None:
            d["point"] = self.point.as_list()
        if self.answer is not None:
            d["answer"] = self.answer
        return d


def execute(action: AgentAction, device: DeviceAdapter, executor: Executor,
            wait_seconds: float = DEFAULT_WAIT_SECONDS, sleep: Callable[[float], None] = time.sleep,
            shot: Screenshot | None = None) -> ExecutionResult:
    """Carry out one action. DeviceError propagates; a grounding miss is a non-fatal failure."""
    if isinstance(action, Status):
        return ExecutionResult(True, f"status {action.status}", shot, terminal=True)
    if isinstance(action, Answer):
        return ExecutionResult(True, "answered", shot, answer=action.text)

    if isinstance(action, (Click, LongPress, InputText)):
        shot = shot or device.screenshot()
        point = executor.locate(action.target, shot, device)
        if point is None:
            return ExecutionResult(False, f"grounding failed for target {action.target!r}", shot)
        if isinstance(action, LongPress):
            device.long_press(point)
            detail = "long-pressed"
        else:
            # input_text activates the field first, then types
            device.tap(point)
            detail = "tapped"
            if isinstance(action, InputText):
                device.type_text(action.text)
                detail = "typed"
        return ExecutionResult(True, f"{detail} at ({point.x:g}, {point.y:g})", device.screenshot(), point)

    if isinstance(action, OpenApp):
        device.open_app(action.app_name)
        detail = f"opened {action.app_name}"
    elif isinstance(action, NavigateHome):
        device.key_home()
        detail = "home"
    elif isinstance(action, NavigateBack):
        device.key_back()
        detail = "back"
    elif isinstance(action, Scroll):
        # content moves opposite to the finger: scrolling down is an upward swipe
        swipe = INVERSE[action.direction]
        device.swipe(swipe)
        detail = f"scrolled {action.direction} (swipe {swipe})"
    elif isinstance(action, Wait):
        if wait_seconds > 0:
            sleep(wait_seconds)
        detail = f"waited {wait_seconds:g}s"
    else:
        raise TypeError(f"not an action: {action!r}")
    return ExecutionResult(True, detail, device.screenshot())


@dataclass
class HistoryEntry:
    step: int
    turn: PlannerTurn | None
    result: ExecutionResult
    malformed: str | None = None

    def render(self) -> str:
        if self.turn is None:
            return f"step {self.step}: malformed planner output ({self.malformed}) | failed: {self.result.detail}"
        outcome = ("ok: " if self.result.ok else "failed: ") + self.result.detail
        return f"step {self.step}: {self.turn.thought} | {self.turn.action.dumps()} | {outcome}"


@dataclass
class EpisodeState:
    goal: str
    max_steps: int
    history: list[HistoryEntry] = field(default_factory=list)
    step_count: int = 0
    screen_ref: Screenshot | None = None
    status: str = "running"

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def append(self, entry: HistoryEntry) -> None:
        if self.step_count >= self.max_steps:
            raise RuntimeError("step limit already reached")
        self.history.append(entry)
        self.step_count += 1

    def history_lines(self) -> list[str]:
        return [h.render() for h in self.history]


@dataclass
class EpisodeResult:
    status: str
    steps: int
    transcript: list[dict[str, Any]]
    answer: str | None = None
    detail: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"status": self.status, "steps": self.steps, "answer": self.answer, "detail": self.detail}


def planner_messages(goal: str, history: Sequence[str], apps: Sequence[str], png: bytes | None):
    parts = [text_part(prompts.render_planner(goal, history, apps))]
    if png is not None:
        parts.append(image_part(png))
    return [message("user", *parts)]


def run_episode(goal: str, planner: Endpoint | LlmEndpointConfig, executor: Executor, device: DeviceAdapter,
                max_steps: int = 30, apps: Sequence[str] = prompts.ANDROID_WORLD_APPS, strict: bool = False,
                wait_seconds: float = DEFAULT_WAIT_SECONDS, sleep: Callable[[float], None] = time.sleep,
                transcript_path: str | Path | None = None, send_screenshot: bool = True) -> EpisodeResult:
    """Run until a status action, two consecutive malformed turns, an error, or ``max_steps``."""
    endpoint = make_endpoint(planner) if isinstance(planner, LlmEndpointConfig) else planner
    state = EpisodeState(goal, max_steps)
    transcript: list[dict[str, Any]] = []
    writer = JsonlWriter(transcript_path) if transcript_path else None
    answer = None
    malformed_run = 0
    detail = ""

    def log_step(rec: dict[str, Any]) -> None:
        transcript.append(rec)
        if writer:
            writer.write(rec)

    try:
        while state.step_count < max_steps:
            step = state.step_count + 1
            t0 = time.perf_counter()
            try:
                shot = device.screenshot()
                state.screen_ref = shot
                png = device.screenshot_png() if send_screenshot else None
            except DeviceError as e:
                state.status, detail = "aborted", f"device error: {e}"
                break
            try:
                raw = endpoint.complete(planner_messages(goal, state.history_lines(), apps, png))
            except EndpointError as e:
                state.status, detail = "aborted", f"planner error: {e}"
                break

            try:
                turn = parse_planner_turn(raw, strict=strict, apps=apps)
            except MalformedTurn as e:
                malformed_run += 1
                res = ExecutionResult(False, str(e), shot)
                state.append(HistoryEntry(step, None, res, e.reason))
                log_step({"step": step, "screenshot_id": shot.id, "thought": None, "action": None,
                          "execution": res.to_json(), "malformed": e.reason, "raw": raw,
                          "wall_ms": round(1000 * (time.perf_counter() - t0), 3)})
                if malformed_run >= MALFORMED_BUDGET:
                    state.status, detail = "aborted", f"{malformed_run} consecutive malformed turns"
                    break
                continue
            malformed_run = 0

            try:
                res = execute(turn.action, device, executor, wait_seconds, sleep, shot)
            except DeviceError as e:
                res = ExecutionResult(False, f"device error: {e}", shot)
                state.append(HistoryEntry(step, turn, res))
                log_step(_record(step, shot, turn, res, t0))
                state.status, detail = "aborted", res.detail
                break
            state.append(HistoryEntry(step, turn, res))
            log_step(_record(step, shot, turn, res, t0))
            if res.answer is not None:
                answer = res.answer
            if res.terminal:
                state.status = turn.action.status
                break
        else:
            state.status = "step_limit"
    finally:
        if writer:
            writer.close()
    return EpisodeResult(state.status, state.step_count, transcript, answer, detail)


def _record(step: int, shot: Screenshot, turn: PlannerTurn, res: ExecutionResult, t0: float) -> dict[str, Any]:
    return {"step": step, "screenshot_id": shot.id, "thought": turn.thought, "action": turn.action.to_json(),
            "execution": res.to_json(), "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}


class _Recorded:
    def __init__(self, point: Point | None):
        self.point = point

    def locate(self, target: str, shot: Screenshot, device: DeviceAdapter) -> Point | None:
        return self.point


def replay_transcript(records: Iterable[Mapping[str, Any]], device: DeviceAdapter,
                      wait_seconds: float = 0.0) -> DeviceAdapter:
    """Re-execute a transcript's actions on ``device`` using the recorded grounded points."""
    def no_sleep(_):
        pass

    for rec in records:
        if rec.get("action") is None:
            continue
        pt = rec.get("execution", {}).get("point")
        try:
            execute(action_from_json(rec["action"]), device, _Recorded(Point(*pt) if pt else None),
                    wait_seconds, no_sleep)
        except DeviceError:
            # the original run aborted here with the same error
            break
    return device
