"""Central finite-difference check of the analytic policy gradients.

Relative error per entry is |a - n| / max(|a|, |n|, floor). The floor keeps
entries whose true gradient is ~0 (cells that never light up, for instance)
from turning round-off into huge relative errors; with h = 1e-5 the
difference quotient is accurate to roughly 1e-10 absolute, so a floor of
1e-4 still leaves the check several orders of magnitude tighter than the
1e-5 tolerance requires.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from groundkit.grpo.objectives import (
    GrpoBatch,
    SftBatch,
    grpo_objective,
    normalize_advantages_batch,
    policy_grad,
    sft_objective,
)
from groundkit.grpo.policy import CONTEXT_DIM, ToyPolicy

DEFAULT_H = 1e-5
DEFAULT_FLOOR = 1e-4


def numeric_grad(f: Callable[[ToyPolicy], float], policy: ToyPolicy, h: float = DEFAULT_H):
    grads = []
    for which in range(2):
        base = policy.params()[which]
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = policy.copy(), policy.copy()
            plus.params()[which][idx] += h
            minus.params()[which][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        grads.append(g)
    return tuple(grads)


def max_rel_error(analytic, numeric, floor: float = DEFAULT_FLOOR) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_case(rng: np.random.Generator, n_cells: int = 4, batch: int = 3, G: int = 4, scale: float = 1.0):
    """A random policy with matching SFT and GRPO batches (small, so the check stays fast)."""
    policy = ToyPolicy.random(n_cells, rng, scale)
    ctx = rng.random((batch, CONTEXT_DIM))
    feats = rng.random((batch, 4, n_cells)) * (rng.random((batch, 4, n_cells)) < 0.6)
    sft = SftBatch(ctx, feats, rng.integers(4, size=batch), rng.integers(n_cells, size=batch))
    persp = rng.integers(4, size=(batch, G))
    cell = rng.integers(n_cells, size=(batch, G))
    lp = policy.logprob(ctx, feats, persp, cell)
    # pi_old a little off the current policy so the ratios differ from 1
    lp_old = lp + 0.3 * rng.standard_normal(lp.shape)
    rewards = (rng.random((batch, G)) < 0.5).astype(float)
    grpo = GrpoBatch(ctx, feats, persp, cell, lp_old, normalize_advantages_batch(rewards), rewards)
    return policy, sft, grpo


@dataclass
class GradCheckReport:
    trials: int
    max_rel_error_sft: float
    max_rel_error_grpo: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error_sft, self.max_rel_error_grpo)

    def to_json(self) -> dict:
        return {"trials": self.trials, "max_rel_error_sft": self.max_rel_error_sft,
                "max_rel_error_grpo": self.max_rel_error_grpo}


def grad_check(trials: int = 100, seed: int = 0, h: float = DEFAULT_H) -> GradCheckReport:
    worst_sft = worst_grpo = 0.0
    for t in range(trials):
        policy, sft, grpo = random_case(np.random.default_rng([seed, t]))
        num = numeric_grad(lambda p: sft_objective(p, sft), policy, h)
        worst_sft = max(worst_sft, max_rel_error(policy_grad(policy, sft, "sft"), num))
        num = numeric_grad(lambda p: grpo_objective(p, grpo), policy, h)
        worst_grpo = max(worst_grpo, max_rel_error(policy_grad(policy, grpo, "grpo"), num))
    return GradCheckReport(trials, worst_sft, worst_grpo)
