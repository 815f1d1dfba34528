"""AdamW with decoupled weight decay, and warmup + cosine learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_iters: int
    total_iters: int
    kind: str = "cosine"  # "cosine" or "constant"

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be positive")
        if not 0 <= self.warmup_iters <= self.total_iters:
            raise ValueError("warmup_iters must lie in [0, total_iters]")
        if self.kind not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def lr_at(self, it: int) -> float:
        return lr_at(self, it)


def lr_at(schedule: LrSchedule, it: int) -> float:
    """Linear ramp 0 -> base over the warmup, then a half cosine down to 0."""
    if not 0 <= it <= schedule.total_iters:
        raise ValueError(f"iteration {it} outside [0, {schedule.total_iters}]")
    w = schedule.warmup_iters
    if it < w:
        return schedule.base_lr * it / w
    if schedule.kind == "constant":
        return schedule.base_lr
    span = schedule.total_iters - w
    if span == 0:
        return 0.0
    progress = (it - w) / span
    if progress >= 1.0:
        return 0.0
    return 0.5 * schedule.base_lr * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    lr: float = 5e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-6
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    state: AdamWState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Return updated parameters; moments and step count in ``state`` advance.

    A non-finite gradient raises before ``state`` is touched.
    """
    if state.lr < 0:
        raise ValueError("learning rate must be non-negative")
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k!r}")

    b1, b2 = state.betas
    t = state.step + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    lr = state.lr
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[k] = m
        state.v[k] = v
        decayed = p * (1.0 - lr * state.weight_decay)
        out[k] = decayed - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    state.step = t
    return out
