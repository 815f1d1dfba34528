"""Runtime policies: multi-step DDIM teacher and one/few-step consistency student.

Each call maps raw observations to raw action chunks:
normalize -> encode -> sample -> denormalize. ``nfe`` counts network trunk
evaluations over the policy's lifetime.
"""

from __future__ import annotations

import numpy as np

from ..consistency import consistency_fn
from ..diffusion import CLIP, ddim_sample, ddim_timesteps, forward_noise
from ..numkit import normal
from .checkpoint import Checkpoint

STUDENT_STEPS = (1, 2, 4)


class _Agent:
    def __init__(self, ckpt: Checkpoint, n_steps: int):
        self.ckpt = ckpt
        self.net = ckpt.network()
        self.n_steps = n_steps
        self.norm = ckpt.normalizer

    @property
    def nfe(self) -> int:
        return self.net.n_evals

    @property
    def observation_spec(self) -> dict:
        """Observation keywords for ``evaluate_policy`` matching the network input."""
        return {"n_points": self.ckpt.arch.n_points, "n_obs_steps": self.ckpt.arch.n_obs_steps}

    def _condition(self, obs) -> np.ndarray:
        pts = self.norm.normalize("points", obs.points)
        poses = self.norm.normalize("poses", obs.poses)
        return self.net.encode_np(pts, poses)

    def __call__(self, obs, rngs) -> np.ndarray:
        cond = self._condition(obs)
        return self.norm.denormalize("actions", self.generate(cond, rngs))


class DiffusionPolicy(_Agent):
    """Teacher: deterministic DDIM over a strided grid, ``n_steps`` evaluations per call."""

    def __init__(self, ckpt: Checkpoint, n_steps: int = 10):
        if not 1 <= n_steps <= ckpt.noise.T:
            raise ValueError(f"n_steps must lie in [1, {ckpt.noise.T}]")
        super().__init__(ckpt, n_steps)

    def generate(self, cond, rngs) -> np.ndarray:
        return ddim_sample(self.net, cond, self.n_steps, self.ckpt.noise, rngs)


class ConsistencyPolicy(_Agent):
    """Student: one consistency jump from ``t = T``, or alternating jump / re-noise
    on a uniform grid for 2 or 4 steps."""

    def __init__(self, ckpt: Checkpoint, n_steps: int = 1):
        if n_steps not in STUDENT_STEPS:
            raise ValueError(f"student n_steps must be one of {STUDENT_STEPS}")
        super().__init__(ckpt, n_steps)
        self.csched = ckpt.consistency_schedule()
        self.grid = ddim_timesteps(ckpt.noise.T, n_steps)

    def generate(self, cond, rngs) -> np.ndarray:
        batch = cond.shape[0]
        a = normal(rngs, batch, self.net.chunk_shape)
        t = np.full(batch, self.grid[0])
        a0 = consistency_fn(self.net, a, t, cond, self.csched)
        for t_next in self.grid[1:]:
            z = normal(rngs, batch, self.net.chunk_shape)
            a = forward_noise(a0, np.full(batch, t_next), z, self.ckpt.noise)
            a0 = consistency_fn(self.net, a, np.full(batch, t_next), cond, self.csched)
        return np.clip(a0, -CLIP, CLIP)


def make_policy(ckpt: Checkpoint, n_steps: int | None = None):
    if ckpt.is_student:
        return ConsistencyPolicy(ckpt, n_steps or 1)
    return DiffusionPolicy(ckpt, n_steps or 10)
