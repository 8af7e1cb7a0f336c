"""Layered application config: flags > environment > file > built-in defaults.

The config file is YAML with nested keys::

    default_endpoint: local
    iou_refine: 0.5
    endpoints:
      local:
        base_url: http://localhost:8000/v1/chat
        model_name: my-model
        api_key_env: MY_API_KEY      # name of the variable, never the key
    grpo_presets:
      toy: {lr_rl: 2.0}
    paths: {image_root: data/images}
    agent: {wait_seconds: 2.0, max_steps: 30}

Environment overrides use ``GROUNDKIT_<KEY>`` with ``__`` between nesting
levels, e.g. ``GROUNDKIT_IOU_REFINE=0.6`` or
``GROUNDKIT_ENDPOINTS__LOCAL__MODEL_NAME=other``. Values are parsed as YAML
scalars. Flags arrive as dotted keys (``iou_refine``, ``paths.image_root``).
"""

from __future__ import annotations

import copy
import dataclasses
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from groundkit.grpo.train import PRESETS, TrainConfig
from groundkit.llm import LlmEndpointConfig

ENV_PREFIX = "GROUNDKIT_"
LAYERS = ("defaults", "file", "env", "flags")

# key names that would carry a credential
_SECRET_KEY = re.compile(r"^(api_?key|apikey|token|secret|password|access_key|auth|authorization)$", re.I)
_SECRET_VALUE = re.compile(r"^(sk-|Bearer\s)")


class ConfigError(ValueError):
    def __init__(self, key: str, layer: str, msg: str):
        super().__init__(f"config key {key!r} ({layer}): {msg}")
        self.key = key
        self.layer = layer


@dataclass(frozen=True)
class AgentSettings:
    wait_seconds: float = 2.0
    max_steps: int = 30


@dataclass(frozen=True)
class AppConfig:
    endpoints: dict[str, LlmEndpointConfig]
    default_endpoint: str = "mock"
    iou_refine: float = 0.5
    annotation_type: str = "bounding box"
    grpo_presets: dict[str, TrainConfig] = field(default_factory=lambda: dict(PRESETS))
    paths: dict[str, str | None] = field(default_factory=dict)
    agent: AgentSettings = AgentSettings()

    def endpoint(self, name: str | None = None) -> LlmEndpointConfig:
        name = name or self.default_endpoint
        if name not in self.endpoints:
            raise ConfigError("endpoints", "resolved", f"unknown endpoint profile {name!r}; known: {sorted(self.endpoints)}")
        return self.endpoints[name]

    def preset(self, name: str) -> TrainConfig:
        if name not in self.grpo_presets:
            raise ConfigError("grpo_presets", "resolved", f"unknown preset {name!r}; known: {sorted(self.grpo_presets)}")
        return self.grpo_presets[name]

    def to_json(self) -> dict[str, Any]:
        return {
            "endpoints": {k: v.to_json() for k, v in sorted(self.endpoints.items())},
            "default_endpoint": self.default_endpoint,
            "iou_refine": self.iou_refine,
            "annotation_type": self.annotation_type,
            "grpo_presets": {k: v.to_json() for k, v in sorted(self.grpo_presets.items())},
            "paths": dict(sorted(self.paths.items())),
            "agent": dataclasses.asdict(self.agent),
        }


def default_tree() -> dict[str, Any]:
    return {
        "default_endpoint": "mock",
        "iou_refine": 0.5,
        "annotation_type": "bounding box",
        "endpoints": {
            "mock": {"base_url": "mock://pass", "model_name": "mock"},
            "mock-reject": {"base_url": "mock://reject", "model_name": "mock"},
        },
        "grpo_presets": {},
        "paths": {"image_root": None},
        "agent": {"wait_seconds": 2.0, "max_steps": 30},
    }


def _reject_secrets(tree: Any, layer: str, path: str = "") -> None:
    if isinstance(tree, Mapping):
        for k, v in tree.items():
            key = f"{path}.{k}" if path else str(k)
            if _SECRET_KEY.match(str(k)):
                raise ConfigError(key, layer, "literal credentials are not allowed; set api_key_env to a variable name")
            _reject_secrets(v, layer, key)
    elif isinstance(tree, str) and _SECRET_VALUE.match(tree):
        raise ConfigError(path, layer, "value looks like a literal credential")


def _merge(base: dict[str, Any], over: Mapping[str, Any], sources: dict[str, str], layer: str, path: str = ""):
    for k, v in over.items():
        key = f"{path}.{k}" if path else k
        if isinstance(v, Mapping) and isinstance(base.get(k), dict):
            _merge(base[k], v, sources, layer, key)
        else:
            base[k] = copy.deepcopy(v) if isinstance(v, Mapping) else v
            sources[key] = layer


def _set_dotted(tree: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "flags", f"{p!r} is not a section")
    node[parts[-1]] = value


def _env_tree(env: Mapping[str, str]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = ".".join(p.lower() for p in name[len(ENV_PREFIX):].split("__"))
        try:
            value = yaml.safe_load(raw) if raw.strip() else raw
        except yaml.YAMLError:
            value = raw
        _set_dotted(tree, dotted, value)
    return tree


def _source(sources: Mapping[str, str], key: str) -> str:
    while key:
        if key in sources:
            return sources[key]
        key = key.rpartition(".")[0]
    return "defaults"


def load_config(paths: list[str | Path] | tuple = (), env: Mapping[str, str] | None = None,
                flags: Mapping[str, Any] | None = None) -> AppConfig:
    env = os.environ if env is None else env
    tree = default_tree()
    sources: dict[str, str] = {}

    for p in paths:
        try:
            text = Path(p).read_text(encoding="utf-8")
            data = yaml.safe_load(text) or {}
        except OSError as e:
            raise ConfigError(str(p), "file", f"cannot read: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(str(p), "file", f"invalid YAML: {e}") from None
        if not isinstance(data, Mapping):
            raise ConfigError(str(p), "file", "top level must be a mapping")
        _reject_secrets(data, "file")
        _merge(tree, data, sources, "file")

    env_layer = _env_tree(env)
    _reject_secrets(env_layer, "env")
    _merge(tree, env_layer, sources, "env")

    flag_layer: dict[str, Any] = {}
    for k, v in (flags or {}).items():
        if v is not None:
            _set_dotted(flag_layer, k, v)
    _reject_secrets(flag_layer, "flags")
    _merge(tree, flag_layer, sources, "flags")
    return _resolve(tree, sources)


def _resolve(tree: Mapping[str, Any], sources: Mapping[str, str]) -> AppConfig:
    known = set(default_tree())
    for k in tree:
        if k not in known:
            raise ConfigError(k, _source(sources, k), "unknown key")

    endpoints = {}
    ep_fields = {f.name for f in dataclasses.fields(LlmEndpointConfig)}
    for name, spec in (tree.get("endpoints") or {}).items():
        key = f"endpoints.{name}"
        if not isinstance(spec, Mapping):
            raise ConfigError(key, _source(sources, key), "must be a mapping")
        bad = set(spec) - ep_fields
        if bad:
            raise ConfigError(f"{key}.{sorted(bad)[0]}", _source(sources, key), "unknown endpoint field")
        if "base_url" not in spec:
            raise ConfigError(f"{key}.base_url", _source(sources, key), "required")
        try:
            endpoints[str(name)] = LlmEndpointConfig(**spec)
        except (TypeError, ValueError) as e:
            raise ConfigError(key, _source(sources, key), str(e)) from None

    default = str(tree["default_endpoint"])
    if default not in endpoints:
        raise ConfigError("default_endpoint", _source(sources, "default_endpoint"),
                          f"references unknown profile {default!r}")

    try:
        iou = float(tree["iou_refine"])
    except (TypeError, ValueError):
        raise ConfigError("iou_refine", _source(sources, "iou_refine"), "must be a number") from None
    if not 0 <= iou <= 1:
        raise ConfigError("iou_refine", _source(sources, "iou_refine"), "must be in [0, 1]")

    presets = dict(PRESETS)
    for name, overrides in (tree.get("grpo_presets") or {}).items():
        key = f"grpo_presets.{name}"
        base = presets.get(name, TrainConfig())
        if not isinstance(overrides, Mapping):
            raise ConfigError(key, _source(sources, key), "must be a mapping")
        try:
            presets[str(name)] = base.with_overrides(**overrides)
        except (TypeError, ValueError) as e:
            raise ConfigError(key, _source(sources, key), str(e)) from None

    agent_spec = tree.get("agent") or {}
    try:
        agent = AgentSettings(**agent_spec)
    except TypeError as e:
        raise ConfigError("agent", _source(sources, "agent"), str(e)) from None
    if agent.max_steps < 1:
        raise ConfigError("agent.max_steps", _source(sources, "agent.max_steps"), "must be >= 1")
    if agent.wait_seconds < 0:
        raise ConfigError("agent.wait_seconds", _source(sources, "agent.wait_seconds"), "must be >= 0")

    paths = tree.get("paths") or {}
    if not isinstance(paths, Mapping):
        raise ConfigError("paths", _source(sources, "paths"), "must be a mapping")
    return AppConfig(endpoints, default, iou, str(tree["annotation_type"]), presets,
                     {str(k): (None if v is None else str(v)) for k, v in paths.items()}, agent)
