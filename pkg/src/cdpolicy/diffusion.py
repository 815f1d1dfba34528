"""Discrete-time diffusion: noise schedule, forward noising, reverse update and DDIM.

Timestep index 0 is the clean boundary (alpha_bar = 1); indices 1..T carry noise.
Networks seen here only need ``prediction_type``, ``chunk_shape`` and
``predict(a_t, t, cond) -> ndarray``.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .numkit.rng import normal

CLIP = 1.0


class PredictionType(str, Enum):
    SAMPLE = "sample"
    EPSILON = "epsilon"


class NoiseSchedule:
    """Squared-cosine alpha-bar schedule over ``T`` steps, betas capped at 0.999."""

    def __init__(self, T: int = 100, kind: str = "squaredcos_cap_v2", s: float = 0.008):
        if T < 1:
            raise ValueError("T must be a positive integer")
        if kind != "squaredcos_cap_v2":
            raise ValueError(f"unsupported schedule {kind!r}")
        self.T = int(T)
        self.kind = kind
        self.s = s

        def f(u):
            return math.cos((u + s) / (1.0 + s) * math.pi / 2) ** 2

        betas = np.zeros(T + 1)
        for t in range(1, T + 1):
            betas[t] = min(1.0 - f(t / T) / f((t - 1) / T), 0.999)
        alpha_bars = np.ones(T + 1)
        alpha_bars[1:] = np.cumprod(1.0 - betas[1:])
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        self.betas = betas
        self.alpha_bars = alpha_bars

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "s": self.s}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(T=int(d["T"]), kind=d.get("kind", "squaredcos_cap_v2"), s=float(d.get("s", 0.008)))

    def __eq__(self, other):
        return isinstance(other, NoiseSchedule) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.kind, self.T, self.s))

    def __repr__(self):
        return f"NoiseSchedule(T={self.T}, kind={self.kind!r})"

    def coefficients(self, t, prev_t=None, eta: float = 0.0):
        """(alpha, gamma, sigma) of the update ``a_s = alpha (a_t - gamma eps) + sigma z``.

        ``prev_t`` defaults to ``t - 1``. With ``eta = 0`` this is the DDIM jump
        from ``t`` to ``prev_t``; ``eta = 1`` gives the ancestral DDPM posterior.
        """
        t = np.asarray(t)
        s = t - 1 if prev_t is None else np.asarray(prev_t)
        ab_t = self.alpha_bars[t]
        ab_s = self.alpha_bars[s]
        sigma = eta * np.sqrt((1.0 - ab_s) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_s)
        alpha = np.sqrt(ab_s / ab_t)
        direction = np.sqrt(np.maximum(1.0 - ab_s - sigma**2, 0.0))
        gamma = np.sqrt(1.0 - ab_t) - direction / alpha
        return alpha, gamma, sigma


def _check_t(t, lo: int, T: int, what: str) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError(f"{what}: timesteps must be integers")
    if np.any(t < lo) or np.any(t > T):
        raise ValueError(f"{what}: timestep outside [{lo}, {T}]")
    return t


def _per_row(c, like: np.ndarray) -> np.ndarray:
    """Reshape a scalar or per-batch coefficient to broadcast over trailing dims."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (like.ndim - c.ndim))


def forward_noise(a0: np.ndarray, t, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) a0 + sqrt(1 - ab_t) noise`` for ``t >= 1``."""
    t = _check_t(t, 1, sched.T, "forward_noise")
    ab = sched.alpha_bars[t]
    return _per_row(np.sqrt(ab), a0) * a0 + _per_row(np.sqrt(1.0 - ab), a0) * noise


def reverse_step(a_t, t, eps_hat, sched: NoiseSchedule, noise=None, prev_t=None, eta: float = 0.0):
    """One conditional reverse update ``alpha (a_t - gamma eps) + sigma z``."""
    t = _check_t(t, 1, sched.T, "reverse_step")
    if prev_t is not None:
        prev_t = _check_t(prev_t, 0, sched.T, "reverse_step")
        if np.any(prev_t >= t):
            raise ValueError("reverse_step: prev_t must be below t")
    alpha, gamma, sigma = sched.coefficients(t, prev_t, eta)
    out = _per_row(alpha, a_t) * (a_t - _per_row(gamma, a_t) * eps_hat)
    if np.any(sigma > 0):
        if noise is None:
            raise ValueError("reverse_step: stochastic update needs a noise sample")
        out = out + _per_row(sigma, a_t) * noise
    return out


def convert_prediction(pred, kind, a_t, t, sched: NoiseSchedule):
    """Return ``(a0_hat, eps_hat)`` from a network output of either kind.

    Both estimates satisfy ``a_t = sqrt(ab) a0_hat + sqrt(1 - ab) eps_hat``.
    At ``t = 0`` the noise estimate is undefined, so both kinds refuse it.
    """
    kind = PredictionType(kind)
    t = _check_t(t, 0, sched.T, "convert_prediction")
    if np.any(t == 0):
        raise ValueError("convert_prediction: undefined at t = 0 (no noise to estimate)")
    ab = sched.alpha_bars[t]
    s0 = _per_row(np.sqrt(ab), a_t)
    s1 = _per_row(np.sqrt(1.0 - ab), a_t)
    if kind is PredictionType.SAMPLE:
        return pred, (a_t - s0 * pred) / s1
    return (a_t - s1 * pred) / s0, pred


def ddim_jump(a0_hat, eps_hat, s, sched: NoiseSchedule):
    """Deterministic DDIM target at index ``s`` given both estimates."""
    s = _check_t(s, 0, sched.T, "ddim_jump")
    ab = sched.alpha_bars[s]
    return _per_row(np.sqrt(ab), a0_hat) * a0_hat + _per_row(np.sqrt(1.0 - ab), a0_hat) * eps_hat


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    """Uniformly strided grid starting at ``T``; e.g. 100 -> 10 gives 100, 90, ..., 10."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must lie in [1, {T}], got {n_steps}")
    grid = np.round(T - np.arange(n_steps) * (T / n_steps)).astype(np.int64)
    return grid


def solver_step(net, a_t, t, s, cond, sched: NoiseSchedule, clip: bool = True):
    """One teacher evaluation at ``t`` followed by a deterministic jump to ``s < t``.

    The sample estimate is clipped before the jump; the noise estimate comes from
    the unclipped prediction.
    """
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), a_t.shape[:1])
    pred = net.predict(a_t, t_arr, cond)
    a0_hat, eps_hat = convert_prediction(pred, net.prediction_type, a_t, t_arr, sched)
    if clip:
        a0_hat = np.clip(a0_hat, -CLIP, CLIP)
    s_arr = np.broadcast_to(np.asarray(s, dtype=np.int64), a_t.shape[:1])
    return ddim_jump(a0_hat, eps_hat, s_arr, sched)


def ddim_sample(net, cond, n_steps: int, sched: NoiseSchedule, rng, batch: int | None = None) -> np.ndarray:
    """Deterministic DDIM from pure noise; exactly ``n_steps`` network evaluations.

    ``rng`` is a generator or one generator per batch row.
    """
    grid = ddim_timesteps(sched.T, n_steps)
    if batch is None:
        batch = _batch_of(cond)
    a = normal(rng, batch, net.chunk_shape)
    targets = np.append(grid[1:], 0)
    for t, s in zip(grid, targets):
        a = solver_step(net, a, int(t), int(s), cond, sched)
    return np.clip(a, -CLIP, CLIP)


def _batch_of(cond) -> int:
    data = getattr(cond, "data", cond)
    return int(np.shape(data)[0])
