"""Reward, group-normalized advantages, the GRPO and SFT objectives and their gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from groundkit.core import AUGMENTED, BBox, Perspective, Point, point_in_box
from groundkit.grpo.policy import ToyPolicy, scene_context
from groundkit.grpo.scenes import SyntheticScene

log = logging.getLogger(__name__)

LOG_RATIO_CLAMP = 30.0


class GroupTooSmall(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


def reward(choice: int | Point, target: int | BBox) -> int:
    """1 when the chosen cell is the target cell, or the chosen point lies in the target box."""
    if isinstance(choice, Point):
        return int(point_in_box(choice, target))
    return int(choice == target)


def cell_box(cell: int, grid_w: int, cell_px: float = 10.0) -> BBox:
    row, col = divmod(cell, grid_w)
    return BBox(col * cell_px, row * cell_px, (col + 1) * cell_px, (row + 1) * cell_px)


def cell_center(cell: int, grid_w: int, cell_px: float = 10.0) -> Point:
    return cell_box(cell, grid_w, cell_px).center()


def normalize_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Z-score rewards within a group (population std); a zero-variance group maps to zeros."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {r.size}")
    centered = r - r.mean()
    std = np.sqrt(np.mean(centered**2))
    if std == 0:
        return np.zeros_like(r)
    return centered / std


def normalize_advantages_batch(rewards: np.ndarray) -> np.ndarray:
    """Row-wise version of :func:`normalize_advantages` for a [B, G] reward array."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape[-1] < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {rewards.shape[-1]}")
    centered = rewards - rewards.mean(-1, keepdims=True)
    std = np.sqrt(np.mean(centered**2, -1, keepdims=True))
    safe = np.where(std == 0, 1.0, std)
    return np.where(std == 0, 0.0, centered / safe)


@dataclass(frozen=True)
class Rollout:
    perspective_choice: int
    cell_choice: int
    logprob_old: float
    logprob_new: float
    reward: int


@dataclass
class RolloutGroup:
    rollouts: list[Rollout]
    advantages: np.ndarray
    # the prompt the group was sampled for; needed for gradients
    context: np.ndarray | None = None
    features: np.ndarray | None = None
    target_cell: int | None = None

    @property
    def G(self) -> int:
        return len(self.rollouts)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.rollouts], dtype=float)

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.rewards == self.rewards[0]))


@dataclass
class ClampCounter:
    count: int = 0


def _log_ratio(lp_new: np.ndarray, lp_old: np.ndarray, counter: ClampCounter | None):
    d = np.asarray(lp_new, dtype=float) - np.asarray(lp_old, dtype=float)
    clamped = np.abs(d) > LOG_RATIO_CLAMP
    if clamped.any():
        n = int(clamped.sum())
        if counter is not None:
            counter.count += n
        log.warning("log-ratio clamped at +/-%s for %d rollouts", LOG_RATIO_CLAMP, n)
    return np.clip(d, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP), clamped


def grpo_loss(group: RolloutGroup, clip: float | None = None, counter: ClampCounter | None = None) -> float:
    """L = -(1/G) sum_i ratio_i * A_i, with ratio = pi / pi_old taken in log space.

    ``clip`` enables a PPO-style clipped surrogate; it is off by default.
    """
    lp_new = np.array([r.logprob_new for r in group.rollouts])
    lp_old = np.array([r.logprob_old for r in group.rollouts])
    d, _ = _log_ratio(lp_new, lp_old, counter)
    ratio = np.exp(d)
    adv = np.asarray(group.advantages, dtype=float)
    if clip is None:
        terms = ratio * adv
    else:
        terms = np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)
    loss = -float(np.mean(terms))
    if not np.isfinite(loss):
        raise NonFiniteLoss("GRPO loss is not finite")
    return loss


def sft_loss(policy: ToyPolicy, context: np.ndarray, features: np.ndarray,
             reasoning_perspective: int, target_cell: int) -> float:
    """-log pi(reasoning perspective) - log pi(target cell | that perspective)."""
    lp = policy.persp_logp(context[None])[0]
    lc = policy.cell_logp(features[None])[0]
    return -float(lp[reasoning_perspective] + lc[reasoning_perspective, target_cell])


# ------------------------------------------------------------------ batches


@dataclass
class SftBatch:
    context: np.ndarray   # [B, D]
    features: np.ndarray  # [B, 4, C]
    persp: np.ndarray     # [B]
    cell: np.ndarray      # [B]

    def __len__(self) -> int:
        return len(self.persp)


@dataclass
class GrpoBatch:
    context: np.ndarray      # [B, D]
    features: np.ndarray     # [B, 4, C]
    persp: np.ndarray        # [B, G]
    cell: np.ndarray         # [B, G]
    logprob_old: np.ndarray  # [B, G]
    advantages: np.ndarray   # [B, G]
    rewards: np.ndarray = field(default=None)  # [B, G]

    def __len__(self) -> int:
        return len(self.persp)

    @classmethod
    def from_groups(cls, groups: Sequence[RolloutGroup]) -> "GrpoBatch":
        return cls(
            context=np.stack([g.context for g in groups]),
            features=np.stack([g.features for g in groups]),
            persp=np.array([[r.perspective_choice for r in g.rollouts] for g in groups]),
            cell=np.array([[r.cell_choice for r in g.rollouts] for g in groups]),
            logprob_old=np.array([[r.logprob_old for r in g.rollouts] for g in groups]),
            advantages=np.stack([np.asarray(g.advantages, dtype=float) for g in groups]),
            rewards=np.stack([g.rewards for g in groups]),
        )


def sft_objective(policy: ToyPolicy, batch: SftBatch) -> float:
    """Mean negative log-likelihood of the (perspective, cell) targets."""
    lp = policy.logprob(batch.context, batch.features, batch.persp, batch.cell)
    return -float(lp.mean())


def grpo_objective(policy: ToyPolicy, batch: GrpoBatch, clip: float | None = None,
                   counter: ClampCounter | None = None) -> float:
    """Mean over groups of the per-group GRPO loss, with pi evaluated under ``policy``."""
    lp_new = policy.logprob(batch.context, batch.features, batch.persp, batch.cell)
    d, _ = _log_ratio(lp_new, batch.logprob_old, counter)
    ratio = np.exp(d)
    adv = batch.advantages
    if clip is None:
        terms = ratio * adv
    else:
        terms = np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)
    loss = -float(terms.mean(-1).mean())
    if not np.isfinite(loss):
        raise NonFiniteLoss("GRPO loss is not finite")
    return loss


def _score_grads(policy: ToyPolicy, ctx, feats, persp, cell, weight):
    """sum_n weight_n * grad log pi(persp_n, cell_n); arrays share leading shape [B, ...]."""
    p = np.exp(policy.persp_logp(ctx))      # [B, K]
    q = np.exp(policy.cell_logp(feats))     # [B, K, C]
    K, C = p.shape[1], q.shape[2]
    b = np.arange(len(ctx)).reshape((-1,) + (1,) * (persp.ndim - 1))
    d_persp = np.eye(K)[persp] - p[b] if persp.ndim > 1 else np.eye(K)[persp] - p
    d_cell = np.eye(C)[cell] - q[b, persp]                 # [B, ..., C]
    onehot_k = np.eye(K)[persp]                             # [B, ..., K]
    w = weight
    if persp.ndim == 1:
        g_persp = np.einsum("b,bd,bk->dk", w, ctx, d_persp)
        g_cell = np.einsum("b,bk,bkf,bc->kfc", w, onehot_k, feats, d_cell)
    else:
        g_persp = np.einsum("bg,bd,bgk->dk", w, ctx, d_persp)
        g_cell = np.einsum("bg,bgk,bkf,bgc->kfc", w, onehot_k, feats, d_cell)
    return g_persp, g_cell


def policy_grad(policy: ToyPolicy, batch: SftBatch | GrpoBatch,
                objective: Literal["sft", "grpo"], clip: float | None = None,
                counter: ClampCounter | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of :func:`sft_objective` or :func:`grpo_objective` w.r.t. both parameter blocks.

    The sequence-level advantage is shared by both decision tokens
    (perspective and cell), so the GRPO gradient weights the joint score.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if objective == "sft":
        w = -np.full(len(batch), 1.0 / len(batch))
        return _score_grads(policy, batch.context, batch.features, batch.persp, batch.cell, w)
    if objective != "grpo":
        raise ValueError(f"unknown objective {objective!r}")
    B, G = batch.persp.shape
    lp_new = policy.logprob(batch.context, batch.features, batch.persp, batch.cell)
    d, clamped = _log_ratio(lp_new, batch.logprob_old, counter)
    ratio = np.exp(d)
    adv = batch.advantages
    # d(ratio)/d(theta) = ratio * grad log pi; zero where the clamp is active
    coef = np.where(clamped, 0.0, ratio * adv)
    if clip is not None:
        unclipped = ratio * adv <= np.clip(ratio, 1 - clip, 1 + clip) * adv
        inside = (ratio >= 1 - clip) & (ratio <= 1 + clip)
        coef = np.where(unclipped | inside, coef, 0.0)
    w = -coef / (G * B)
    return _score_grads(policy, batch.context, batch.features, batch.persp, batch.cell, w)


# ----------------------------------------------------------------- rollouts


def _sample_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling along the last axis of ``probs`` with uniforms ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    return (u[..., None] > cdf).sum(-1)


def sample_batch(policy: ToyPolicy, ctx: np.ndarray, feats: np.ndarray, targets: np.ndarray,
                 G: int, rng: np.random.Generator) -> GrpoBatch:
    if G < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {G}")
    B = len(ctx)
    p = np.exp(policy.persp_logp(ctx))                       # [B, K]
    q = np.exp(policy.cell_logp(feats))                      # [B, K, C]
    u = rng.random((B, G, 2))
    persp = _sample_categorical(np.repeat(p[:, None], G, 1), u[..., 0])
    b = np.arange(B)[:, None]
    cell = _sample_categorical(q[b, persp], u[..., 1])
    lp = policy.logprob(ctx, feats, persp, cell)
    rewards = (cell == targets[:, None]).astype(float)
    return GrpoBatch(ctx, feats, persp, cell, lp, normalize_advantages_batch(rewards), rewards)


def sample_rollouts(policy: ToyPolicy, scene: SyntheticScene, instruction_perspective: Perspective,
                    G: int, rng: np.random.Generator) -> RolloutGroup:
    """G independent (perspective, cell) draws for one prompt, scored and normalized."""
    ctx = scene_context(scene, instruction_perspective)
    feats = scene.feature_matrix()
    batch = sample_batch(policy, ctx[None], feats[None], np.array([scene.target_cell]), G, rng)
    rollouts = [
        Rollout(int(batch.persp[0, i]), int(batch.cell[0, i]), float(batch.logprob_old[0, i]),
                float(batch.logprob_old[0, i]), int(batch.rewards[0, i]))
        for i in range(G)
    ]
    return RolloutGroup(rollouts, batch.advantages[0], ctx, feats, scene.target_cell)


def perspective_index(p: Perspective) -> int:
    return AUGMENTED.index(p)
