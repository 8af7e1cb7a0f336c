"""Factorized categorical policy over (reasoning perspective, grid cell).

    pi(k, c | context, F) = softmax(context @ theta_persp)[k]
                            * softmax(F[k] @ theta_cell[k])[c]

``context`` encodes the instruction's perspective (one-hot), how
ambiguous each perspective is in the scene (1 - 1 / number of matching
elements, so 0 when it singles out the target) and a bias term. ``F[k]`` is perspective ``k``'s per-cell match
strength vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from groundkit.core import AUGMENTED, Perspective
from groundkit.grpo.scenes import N_PERSPECTIVES, SyntheticScene

CONTEXT_DIM = 2 * N_PERSPECTIVES + 1


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(z, axis))


def entropy(logp: np.ndarray, axis: int = -1) -> np.ndarray:
    return -(np.exp(logp) * logp).sum(axis=axis)


def scene_context(scene: SyntheticScene, instruction: Perspective) -> np.ndarray:
    ctx = np.zeros(CONTEXT_DIM)
    ctx[AUGMENTED.index(instruction)] = 1.0
    counts = scene.match_counts()
    for i, p in enumerate(AUGMENTED):
        ctx[N_PERSPECTIVES + i] = 1.0 - 1.0 / counts[p]
    ctx[-1] = 1.0
    return ctx


@dataclass
class ToyPolicy:
    theta_persp: np.ndarray  # [CONTEXT_DIM, 4]
    theta_cell: np.ndarray   # [4, n_cells, n_cells]

    def __post_init__(self):
        self.theta_persp = np.asarray(self.theta_persp, dtype=float)
        self.theta_cell = np.asarray(self.theta_cell, dtype=float)
        if not (np.isfinite(self.theta_persp).all() and np.isfinite(self.theta_cell).all()):
            raise ValueError("policy parameters must be finite")

    @classmethod
    def zeros(cls, n_cells: int) -> "ToyPolicy":
        return cls(np.zeros((CONTEXT_DIM, N_PERSPECTIVES)), np.zeros((N_PERSPECTIVES, n_cells, n_cells)))

    @classmethod
    def random(cls, n_cells: int, rng: np.random.Generator, scale: float = 0.01) -> "ToyPolicy":
        return cls(scale * rng.standard_normal((CONTEXT_DIM, N_PERSPECTIVES)),
                   scale * rng.standard_normal((N_PERSPECTIVES, n_cells, n_cells)))

    @property
    def n_cells(self) -> int:
        return self.theta_cell.shape[-1]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.theta_persp.copy(), self.theta_cell.copy())

    def params(self) -> tuple[np.ndarray, np.ndarray]:
        return self.theta_persp, self.theta_cell

    # --- batched distributions; ctx [B, D], feats [B, 4, C]

    def persp_logp(self, ctx: np.ndarray) -> np.ndarray:
        return log_softmax(ctx @ self.theta_persp)

    def cell_logp(self, feats: np.ndarray) -> np.ndarray:
        return log_softmax(np.einsum("bkf,kfc->bkc", feats, self.theta_cell))

    def logprob(self, ctx: np.ndarray, feats: np.ndarray, persp: np.ndarray, cell: np.ndarray) -> np.ndarray:
        """log pi(persp, cell) for aligned batches; persp/cell may carry a trailing rollout axis."""
        lp = self.persp_logp(ctx)
        lc = self.cell_logp(feats)
        b = np.arange(len(ctx)).reshape((-1,) + (1,) * (persp.ndim - 1))
        return lp[b, persp] + lc[b, persp, cell]

    def joint_entropy(self, ctx: np.ndarray, feats: np.ndarray) -> np.ndarray:
        lp = self.persp_logp(ctx)
        lc = self.cell_logp(feats)
        return entropy(lp) + (np.exp(lp) * entropy(lc)).sum(-1)

    def expected_accuracy(self, ctx: np.ndarray, feats: np.ndarray, target: np.ndarray) -> np.ndarray:
        p = np.exp(self.persp_logp(ctx))
        q = np.exp(self.cell_logp(feats))
        return (p * q[np.arange(len(ctx)), :, target]).sum(-1)

    # --- checkpoints

    def to_json(self, meta: dict[str, Any] | None = None) -> dict[str, Any]:
        return {
            "theta_persp": self.theta_persp.tolist(),
            "theta_cell": self.theta_cell.tolist(),
            "meta": dict(meta or {}),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "ToyPolicy":
        return cls(np.array(d["theta_persp"]), np.array(d["theta_cell"]))

    def save(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(meta), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ToyPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))
