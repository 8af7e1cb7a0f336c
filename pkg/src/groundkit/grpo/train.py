"""Two-stage toy training: optional SFT, then optional GRPO, on synthetic scenes.

Random streams under one seed (all via ``default_rng([seed, stream, ...])``):

    0  SFT scenes          3  parameter init
    1  RL training scenes  4  rollouts
    2  eval scenes         5  SFT batch sampling

so two regimes with the same seed see identical scenes and prompts.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from groundkit.core import AUGMENTED
from groundkit.grpo.objectives import (
    ClampCounter,
    GrpoBatch,
    SftBatch,
    policy_grad,
    sample_batch,
    sft_objective,
)
from groundkit.grpo.policy import ToyPolicy, scene_context
from groundkit.grpo.scenes import ConfigError, SceneConfig, SyntheticScene, gen_scenes

log = logging.getLogger(__name__)

SFT_REGIMES = ("sft_diverse", "sft_coords_only", "none")
RL_REGIMES = ("rl", "none")

STREAM_SFT, STREAM_RL, STREAM_EVAL, STREAM_INIT, STREAM_ROLLOUT, STREAM_BATCH = range(6)


@dataclass(frozen=True)
class TrainConfig:
    g_rollouts: int = 8
    lr_sft: float = 5e-6
    lr_rl: float = 1e-6
    batch_size: int = 256
    sft_steps: int = 200
    rl_steps: int = 300
    seed: int = 0
    entropy_logging: bool = True
    eval_interval: int = 25
    grid_w: int = 4
    grid_h: int = 4
    n_elements: int = 8
    n_values: int = 6
    max_matches: int = 3
    jitter: float = 0.8
    sft_profile: str = "all_unique"
    rl_profile: str = "mixed:0.3"
    n_sft_scenes: int = 512
    n_rl_scenes: int = 512
    n_eval_scenes: int = 512
    init_scale: float = 0.01
    dummy_perspective: int = 0
    clip: float | None = None

    def __post_init__(self):
        if self.g_rollouts < 2:
            raise ConfigError("g_rollouts must be >= 2")
        if self.lr_sft <= 0 or self.lr_rl <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.batch_size < 1 or self.eval_interval < 1:
            raise ConfigError("batch_size and eval_interval must be >= 1")
        if self.sft_steps < 0 or self.rl_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if not 0 <= self.dummy_perspective < len(AUGMENTED):
            raise ConfigError("dummy_perspective must index an augmented perspective")
        for profile in (self.sft_profile, self.rl_profile):
            self.scene_config(profile, 1)

    def scene_config(self, profile: str, n: int) -> SceneConfig:
        return SceneConfig(n_scenes=n, grid_w=self.grid_w, grid_h=self.grid_h, ambiguity_profile=profile,
                           n_elements=self.n_elements, n_values=self.n_values,
                           max_matches=self.max_matches, jitter=self.jitter)

    def with_overrides(self, **changes: Any) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# Learning rates as reported for the 7B model; they barely move the toy policy.
PAPER = TrainConfig()
# Toy-scale rates; the policy has ~1k parameters and mean-reduced losses.
TOY = TrainConfig(lr_sft=20.0, lr_rl=5.0, batch_size=64, sft_steps=400)
PRESETS: dict[str, TrainConfig] = {"paper": PAPER, "toy": TOY}


def preset(name: str) -> TrainConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


def parse_regime(regime: str) -> tuple[str, str]:
    """``"sft_diverse+rl"`` -> ("sft_diverse", "rl"); a lone stage-one name means no RL."""
    parts = regime.strip().split("+")
    if len(parts) == 1:
        parts.append("none")
    if len(parts) != 2:
        raise ConfigError(f"bad regime {regime!r}")
    sft, rl = (p.strip() for p in parts)
    if sft not in SFT_REGIMES or rl not in RL_REGIMES:
        raise ConfigError(f"bad regime {regime!r}; stage one in {SFT_REGIMES}, stage two in {RL_REGIMES}")
    return sft, rl


@dataclass
class Prompts:
    """A scene set with one instruction perspective per scene, as policy inputs."""

    context: np.ndarray   # [N, D]
    features: np.ndarray  # [N, 4, C]
    target: np.ndarray    # [N]
    instruction: np.ndarray  # [N]

    def __len__(self) -> int:
        return len(self.target)

    def take(self, idx: np.ndarray) -> "Prompts":
        return Prompts(self.context[idx], self.features[idx], self.target[idx], self.instruction[idx])

    @classmethod
    def build(cls, scenes: list[SyntheticScene], seed: int, stream: int) -> "Prompts":
        rng = np.random.default_rng([seed, stream, 1 << 20])
        instr = rng.integers(len(AUGMENTED), size=len(scenes))
        return cls(
            np.stack([scene_context(s, AUGMENTED[k]) for s, k in zip(scenes, instr)]),
            np.stack([s.feature_matrix() for s in scenes]),
            np.array([s.target_cell for s in scenes]),
            instr,
        )


def _record(stage: str, step: int, **fields: Any) -> dict[str, Any]:
    rec = {
        "stage": stage, "step": step, "mean_reward": None, "zero_variance_fraction": None,
        "train_accuracy": None, "eval_accuracy": None, "rollout_entropy": None,
        "clamp_count": 0, "sft_loss": None,
    }
    rec.update(fields)
    return rec


def evaluate(policy: ToyPolicy, prompts: Prompts, entropy: bool = True) -> dict[str, float]:
    """Exact expected accuracy and joint entropy, averaged over prompts (no sampling)."""
    out = {"eval_accuracy": float(policy.expected_accuracy(prompts.context, prompts.features, prompts.target).mean())}
    if entropy:
        out["rollout_entropy"] = float(policy.joint_entropy(prompts.context, prompts.features).mean())
    return out


def sft_batch(prompts: Prompts, mode: str, cfg: TrainConfig, rng: np.random.Generator) -> SftBatch:
    idx = rng.integers(len(prompts), size=cfg.batch_size)
    p = prompts.take(idx)
    K = len(AUGMENTED)
    if mode == "sft_diverse":
        # an ordered pair of distinct perspectives: one is the instruction, the other the reasoning
        instr = rng.integers(K, size=cfg.batch_size)
        reason = (instr + 1 + rng.integers(K - 1, size=cfg.batch_size)) % K
        ctx = p.context.copy()
        ctx[:, :K] = np.eye(K)[instr]
    elif mode == "sft_coords_only":
        reason = np.full(cfg.batch_size, cfg.dummy_perspective)
        ctx = p.context
    else:
        raise ConfigError(f"not an SFT regime: {mode!r}")
    return SftBatch(ctx, p.features, reason, p.target)


def run_sft(policy: ToyPolicy, mode: str, cfg: TrainConfig, train: Prompts, evalset: Prompts,
            emit: Callable[[dict[str, Any]], None]) -> ToyPolicy:
    rng = np.random.default_rng([cfg.seed, STREAM_BATCH])
    for step in range(1, cfg.sft_steps + 1):
        batch = sft_batch(train, mode, cfg, rng)
        loss = sft_objective(policy, batch)
        g_p, g_c = policy_grad(policy, batch, "sft")
        train_acc = float(policy.expected_accuracy(batch.context, batch.features, batch.cell).mean())
        policy = ToyPolicy(policy.theta_persp - cfg.lr_sft * g_p, policy.theta_cell - cfg.lr_sft * g_c)
        rec = _record("sft", step, sft_loss=loss, train_accuracy=train_acc)
        if step % cfg.eval_interval == 0 or step == cfg.sft_steps:
            rec.update(evaluate(policy, evalset, cfg.entropy_logging))
        emit(rec)
    return policy


def run_rl(policy: ToyPolicy, cfg: TrainConfig, train: Prompts, evalset: Prompts,
           emit: Callable[[dict[str, Any]], None], step0: int = 0) -> ToyPolicy:
    rng = np.random.default_rng([cfg.seed, STREAM_ROLLOUT])
    for step in range(1, cfg.rl_steps + 1):
        p = train.take(rng.integers(len(train), size=cfg.batch_size))
        batch: GrpoBatch = sample_batch(policy, p.context, p.features, p.target, cfg.g_rollouts, rng)
        counter = ClampCounter()
        # one update per batch, so pi == pi_old at gradient time
        g_p, g_c = policy_grad(policy, batch, "grpo", clip=cfg.clip, counter=counter)
        policy = ToyPolicy(policy.theta_persp - cfg.lr_rl * g_p, policy.theta_cell - cfg.lr_rl * g_c)
        r = batch.rewards
        rec = _record(
            "rl", step0 + step,
            mean_reward=float(r.mean()),
            train_accuracy=float(r.mean()),
            zero_variance_fraction=float(np.mean(np.all(r == r[:, :1], axis=1))),
            clamp_count=counter.count,
        )
        if step % cfg.eval_interval == 0 or step == cfg.rl_steps:
            rec.update(evaluate(policy, evalset, cfg.entropy_logging))
        emit(rec)
    return policy


@dataclass
class TrainResult:
    regime: str
    policy: ToyPolicy
    timeline: list[dict[str, Any]]

    def final_eval(self) -> dict[str, float]:
        last = [r for r in self.timeline if r["eval_accuracy"] is not None][-1]
        return {"eval_accuracy": last["eval_accuracy"], "rollout_entropy": last["rollout_entropy"]}

    def rl_records(self) -> list[dict[str, Any]]:
        return [r for r in self.timeline if r["stage"] == "rl"]

    def tail_zero_variance(self, fraction: float = 0.2) -> float:
        """Mean zero-variance group fraction over the last ``fraction`` of RL steps."""
        rl = self.rl_records()
        if not rl:
            raise ValueError("no RL steps in this run")
        n = max(1, int(round(len(rl) * fraction)))
        return float(np.mean([r["zero_variance_fraction"] for r in rl[-n:]]))


def train_toy(cfg: TrainConfig, regime: str, init: ToyPolicy | None = None,
              emit: Callable[[dict[str, Any]], None] | None = None) -> TrainResult:
    sft_mode, rl_mode = parse_regime(regime)
    timeline: list[dict[str, Any]] = []

    def push(rec: dict[str, Any]) -> None:
        timeline.append(rec)
        if emit is not None:
            emit(rec)

    n_cells = cfg.grid_w * cfg.grid_h
    evalset = Prompts.build(gen_scenes(cfg.scene_config(cfg.rl_profile, cfg.n_eval_scenes), cfg.seed, STREAM_EVAL),
                            cfg.seed, STREAM_EVAL)
    if init is None:
        policy = ToyPolicy.random(n_cells, np.random.default_rng([cfg.seed, STREAM_INIT]), cfg.init_scale)
    else:
        if init.n_cells != n_cells:
            raise ConfigError(f"initial policy has {init.n_cells} cells, config has {n_cells}")
        policy = init.copy()
    push(_record("init", 0, **evaluate(policy, evalset, cfg.entropy_logging)))

    if sft_mode != "none" and cfg.sft_steps:
        scenes = gen_scenes(cfg.scene_config(cfg.sft_profile, cfg.n_sft_scenes), cfg.seed, STREAM_SFT)
        policy = run_sft(policy, sft_mode, cfg, Prompts.build(scenes, cfg.seed, STREAM_SFT), evalset, push)
    if rl_mode == "rl" and cfg.rl_steps:
        scenes = gen_scenes(cfg.scene_config(cfg.rl_profile, cfg.n_rl_scenes), cfg.seed, STREAM_RL)
        step0 = timeline[-1]["step"]
        policy = run_rl(policy, cfg, Prompts.build(scenes, cfg.seed, STREAM_RL), evalset, push, step0)
    return TrainResult(regime, policy, timeline)
