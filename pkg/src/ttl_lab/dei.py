"""Delayed experience injection: transitions finish when their TTL elapses.

A TTL decision cannot be scored when it is made; the episode ends when the
entry either gets invalidated (the TTL was too long) or expires quietly (it
survived, reward depends on system load). DEI parks the incomplete transition
until decided_at + action, stamps it if an invalidation is issued in between,
and completes it with the reward and successor state observed at the due time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RewardConfig:
    r0: float = 1.0
    load_threshold: float = 0.8
    above_threshold_form: str = "penalty"  # "penalty" or "literal"

    def validate(self) -> None:
        if self.r0 <= 0.0:
            raise ValueError("r0 must be positive")
        if not (0.0 < self.load_threshold <= 1.0):
            raise ValueError("load_threshold must be in (0, 1]")
        if self.above_threshold_form not in ("penalty", "literal"):
            raise ValueError(f"unknown above_threshold_form {self.above_threshold_form!r}")


def transition_reward(t_inv: float | None, due_at: float, load: float, cfg: RewardConfig) -> float:
    """Reward at completion time.

    Invalidated episodes pay the overshoot t_inv - due_at (non-positive: the
    invalidation arrived before the chosen expiry). Surviving episodes earn
    r0 scaled by cache load while load stays under the threshold; above it the
    default form penalizes proportionally to load, the literal form keeps a
    shrinking positive payout.
    """
    if t_inv is not None:
        return t_inv - due_at
    if load <= cfg.load_threshold:
        return cfg.r0 * (1.0 + load)
    if cfg.above_threshold_form == "penalty":
        return -cfg.r0 * load
    return cfg.r0 * (1.0 - load)


@dataclass
class IncompleteTransition:
    """A decision waiting for its outcome."""

    serve_id: int
    unit: int
    s: np.ndarray
    a: float
    decided_at: float
    due_at: float
    result_keys: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    inval_at: float | None = None


class DeiQueue:
    """Pending transitions keyed by serve id.

    The simulation scheduler owns the due events; this structure only holds
    state between decision and completion and enforces the bookkeeping rules
    (one stamp per transition, completion exactly once).
    """

    def __init__(self):
        self._pending: dict[int, IncompleteTransition] = {}

    def __len__(self) -> int:
        return len(self._pending)

    def __contains__(self, serve_id: int) -> bool:
        return serve_id in self._pending

    def enqueue(self, it: IncompleteTransition) -> None:
        if it.due_at < it.decided_at:
            raise ValueError("transition due before it was decided")
        if it.serve_id in self._pending:
            raise ValueError(f"serve {it.serve_id} already pending")
        self._pending[it.serve_id] = it

    def stamp_invalidation(self, serve_id: int, t_inv: float) -> bool:
        """Record the first invalidation issue time; later stamps are ignored."""
        it = self._pending.get(serve_id)
        if it is None or it.inval_at is not None:
            return False
        it.inval_at = t_inv
        return True

    def pop_due(self, serve_id: int) -> IncompleteTransition:
        return self._pending.pop(serve_id)
