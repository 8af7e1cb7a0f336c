"""Planner/executor agent protocol with a scriptable mock device."""

from groundkit.agent.actions import ACTION_TYPES, MalformedTurn, PlannerTurn, action_from_json, parse_planner_turn
from groundkit.agent.device import DeviceAdapter, DeviceError, MockDevice
from groundkit.agent.loop import (
    EpisodeResult,
    ExecutionResult,
    GroundingExecutor,
    RegionExecutor,
    execute,
    replay_transcript,
    run_episode,
)

__all__ = [
    "ACTION_TYPES", "DeviceAdapter", "DeviceError", "EpisodeResult", "ExecutionResult", "GroundingExecutor",
    "MalformedTurn", "MockDevice", "PlannerTurn", "RegionExecutor", "action_from_json", "execute",
    "parse_planner_turn", "replay_transcript", "run_episode",
]
