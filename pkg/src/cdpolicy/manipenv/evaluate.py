"""Receding-horizon evaluation of chunked policies on the toy tasks.

A policy is any callable ``policy(obs: ObsBatch, rngs) -> (B, H, A)`` raw-unit
action chunks, with one random stream per episode in ``rngs``. Policies that
run a network expose a cumulative ``nfe`` counter so calls can be audited.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..numkit import stream
from .pointcloud import observe_points
from .world import action_dim, check_task, expert_action, reset, step


@dataclass
class ObsBatch:
    points: np.ndarray  # (B, S, P, 3) raw (x, y, object label)
    poses: np.ndarray  # (B, S, 3) raw
    states: list = field(default_factory=list)  # privileged, for scripted baselines only

    def __len__(self):
        return self.points.shape[0]


@dataclass
class EvalResult:
    task: str
    success_rate: float
    successes: list[bool]
    episode_lengths: list[int]
    latency_ms_mean: float
    latency_ms_std: float
    nfe_per_call: float
    n_calls: int


class ExpertPolicy:
    """Scripted expert exposed through the policy interface (uses privileged state)."""

    nfe = 0

    def __init__(self, horizon: int = 4):
        self.horizon = horizon

    def __call__(self, obs: ObsBatch, rngs) -> np.ndarray:
        chunks = []
        for s in obs.states:
            acts = []
            for _ in range(self.horizon):
                a = expert_action(s)
                acts.append(a)
                s = step(s, a)
            chunks.append(acts)
        return np.array(chunks)


class RandomPolicy:
    nfe = 0

    def __init__(self, task: str, horizon: int = 4):
        self.shape = (horizon, action_dim(task))

    def __call__(self, obs: ObsBatch, rngs) -> np.ndarray:
        return np.stack([g.uniform(-1.0, 1.0, size=self.shape) for g in rngs])


class History:
    """Rolling window of the last ``n_obs_steps`` frames; the first frame is repeated."""

    def __init__(self, states, n_points: int, n_obs_steps: int = 2):
        self.n_points = n_points
        pts = observe_points(states, n_points)
        poses = np.stack([s.pose() for s in states])
        self.points = np.repeat(pts[:, None], n_obs_steps, axis=1)
        self.poses = np.repeat(poses[:, None], n_obs_steps, axis=1)

    def push(self, states, rows):
        pts = observe_points([states[i] for i in rows], self.n_points)
        poses = np.stack([states[i].pose() for i in rows])
        self.points[rows] = np.concatenate([self.points[rows, 1:], pts[:, None]], axis=1)
        self.poses[rows] = np.concatenate([self.poses[rows, 1:], poses[:, None]], axis=1)


def evaluate_policy(policy, task: str, n_episodes: int, seed: int, *, max_steps: int = 200,
                    n_execute: int = 2, n_points: int = 64, n_obs_steps: int = 2) -> EvalResult:
    """Run ``n_episodes`` in lockstep: observe, predict a chunk, execute its first
    ``n_execute`` actions, repeat until success or ``max_steps``.

    Latency is wall-clock around the policy call only (one call serves the whole
    batch of live episodes).
    """
    check_task(task)
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    states = [reset(task, stream(seed, "eval-episode", i)) for i in range(n_episodes)]
    rngs = [stream(seed, "eval-policy", i) for i in range(n_episodes)]
    hist = History(states, n_points, n_obs_steps)
    lengths = [max_steps] * n_episodes
    latencies, nfes = [], []
    t = 0
    while t < max_steps:
        live = [i for i, s in enumerate(states) if not s.success]
        if not live:
            break
        obs = ObsBatch(hist.points[live], hist.poses[live], [states[i] for i in live])
        before = getattr(policy, "nfe", 0)
        tic = time.perf_counter()
        chunk = policy(obs, [rngs[i] for i in live])
        latencies.append((time.perf_counter() - tic) * 1e3)
        nfes.append(getattr(policy, "nfe", 0) - before)
        for j in range(min(n_execute, chunk.shape[1])):
            if t >= max_steps:
                break
            for row, i in enumerate(live):
                if not states[i].success:
                    states[i] = step(states[i], chunk[row, j])
                    if states[i].success:
                        lengths[i] = t + 1
            t += 1
            moving = [i for i in live if not states[i].success]
            if not moving:
                break
            hist.push(states, moving)
    successes = [s.success for s in states]
    lat = np.array(latencies) if latencies else np.zeros(1)
    return EvalResult(
        task=task,
        success_rate=float(np.mean(successes)),
        successes=successes,
        episode_lengths=lengths,
        latency_ms_mean=float(lat.mean()),
        latency_ms_std=float(lat.std()),
        nfe_per_call=float(np.mean(nfes)) if nfes else 0.0,
        n_calls=len(latencies),
    )
