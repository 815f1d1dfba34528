"""Deterministic 2D tabletop tasks with scripted experts.

The arena is [-1, 1]^2. The effector moves by at most ``MAX_STEP`` per step.
Three tasks, easy to hard:

* ``reach-goal``: bring the effector within ``REACH_TOL`` of the goal.
* ``push-block``: push the block within ``PLACE_TOL`` of the goal. When the
  effector moves toward the block and ends up closer than ``PUSH_RADIUS``, the
  block is pushed out along the contact normal by the overlap.
* ``pick-place``: close the gripper on the block, carry it, release it within
  ``PLACE_TOL`` of the goal.

Success is latched: once reached it stays true for the rest of the episode.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

TASKS = ("reach-goal", "push-block", "pick-place")
ACTION_DIMS = {"reach-goal": 2, "push-block": 2, "pick-place": 3}

MAX_STEP = 0.08
APERTURE_RATE = 0.25
PUSH_RADIUS = 0.10
GRASP_RADIUS = 0.05
GRASP_APERTURE = 0.3
REACH_TOL = 0.05
PLACE_TOL = 0.08


def action_dim(task: str) -> int:
    check_task(task)
    return ACTION_DIMS[task]


def check_task(task: str) -> None:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")


@dataclass(frozen=True, eq=False)
class WorldState:
    task: str
    effector: np.ndarray
    aperture: float
    goal: np.ndarray
    block: np.ndarray | None = None
    grasped: bool = False
    ever_grasped: bool = False
    success: bool = False
    t: int = 0

    def as_vector(self) -> np.ndarray:
        """Flat view used for bitwise trajectory comparisons."""
        block = self.block if self.block is not None else np.full(2, np.nan)
        return np.concatenate([
            self.effector, [self.aperture], self.goal, block,
            [self.grasped, self.ever_grasped, self.success, self.t],
        ]).astype(np.float64)

    def pose(self) -> np.ndarray:
        return np.array([self.effector[0], self.effector[1], self.aperture])


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, -1.0, 1.0)


def _dist(a, b) -> float:
    return float(np.hypot(*(np.asarray(a) - np.asarray(b))))


def is_success(s: WorldState) -> bool:
    if s.task == "reach-goal":
        return _dist(s.effector, s.goal) < REACH_TOL
    if s.task == "push-block":
        return _dist(s.block, s.goal) < PLACE_TOL
    return s.ever_grasped and not s.grasped and _dist(s.block, s.goal) < PLACE_TOL


def _push(e0, e1, block):
    moved = e1 - e0
    if not np.any(moved):
        return block
    d = _dist(e1, block)
    if d >= PUSH_RADIUS or float(moved @ (block - e0)) <= 0.0:
        return block
    normal = (block - e1) / d if d > 1e-12 else moved / np.hypot(*moved)
    return _clamp(block + normal * (PUSH_RADIUS - d))


def step(state: WorldState, action) -> WorldState:
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    e0 = state.effector
    e1 = _clamp(e0 + a[:2] * MAX_STEP)
    block, aperture, grasped = state.block, state.aperture, state.grasped
    if state.task == "push-block":
        block = _push(e0, e1, block)
    elif state.task == "pick-place":
        aperture = float(np.clip(aperture + APERTURE_RATE * a[2], 0.0, 1.0))
        if grasped and aperture < GRASP_APERTURE:
            block = _clamp(block + (e1 - e0))
        grasped = aperture < GRASP_APERTURE and _dist(e1, block) < GRASP_RADIUS
    new = replace(
        state, effector=e1, aperture=aperture, block=block, grasped=grasped,
        ever_grasped=state.ever_grasped or grasped, t=state.t + 1,
    )
    if not new.success and is_success(new):
        new = replace(new, success=True)
    return new


def _uniform(rng, lo, hi):
    return rng.uniform(lo, hi, size=2)


def reset(task: str, rng: np.random.Generator) -> WorldState:
    """Random start for ``task``; rejection-sampled so the task is non-trivial."""
    check_task(task)
    if task == "reach-goal":
        while True:
            e, g = _uniform(rng, -0.8, 0.8), _uniform(rng, -0.8, 0.8)
            if _dist(e, g) >= 0.3:
                return WorldState(task, e, 1.0, g)
    if task == "push-block":
        while True:
            g = _uniform(rng, -0.6, 0.6)
            b = _uniform(rng, -0.7, 0.7)
            if not 0.3 <= _dist(b, g) <= 0.7:
                continue
            u = (g - b) / _dist(b, g)
            perp = np.array([-u[1], u[0]])
            e = b - u * rng.uniform(0.2, 0.4) + perp * rng.uniform(-0.2, 0.2)
            if np.all(np.abs(e) <= 0.95):
                return WorldState(task, e, 1.0, g, block=b)
    while True:
        e, b, g = (_uniform(rng, -0.7, 0.7) for _ in range(3))
        if min(_dist(e, b), _dist(b, g), _dist(e, g)) >= 0.3:
            return WorldState(task, e, 1.0, g, block=b)


def _goto(e, target) -> np.ndarray:
    return np.clip((np.asarray(target) - e) / MAX_STEP, -1.0, 1.0)


def expert_action(state: WorldState) -> np.ndarray:
    """Proportional controller toward the current subgoal (gain 1, saturating)."""
    task = state.task
    zero = np.zeros(ACTION_DIMS[task])
    if state.success:
        return zero
    e = state.effector
    if task == "reach-goal":
        return _goto(e, state.goal)
    b, g = state.block, state.goal
    if task == "push-block":
        if _dist(b, g) < PLACE_TOL:
            return zero
        u = (g - b) / _dist(b, g)
        rel = e - b
        along = float(rel @ u)
        lateral = float(np.hypot(*(rel - along * u)))
        # blend from the approach point behind the block to the push line as the effector lines up
        w = np.clip(1.0 - lateral / 0.02, 0.0, 1.0) * np.clip((-along - (PUSH_RADIUS - 0.03)) / 0.03, 0.0, 1.0)
        target = w * (g - u * PUSH_RADIUS) + (1.0 - w) * (b - u * (PUSH_RADIUS + 0.03))
        return _goto(e, target)
    # pick-place
    if not state.grasped:
        if _dist(e, b) > 0.02:
            return np.append(_goto(e, b), 1.0)
        return np.array([0.0, 0.0, -1.0])
    if _dist(b, g) > 0.03:
        return np.append(_goto(e, g), -1.0)
    return np.array([0.0, 0.0, 1.0])


def expert_rollout(state: WorldState, max_steps: int = 100, noise: float = 0.0, rng=None):
    """Run the expert; returns (states, actions) with ``len(states) == len(actions) + 1``.

    With ``noise > 0`` the executed action is the expert's plus Gaussian noise of
    that scale while the returned actions stay the expert's labels, so the
    rollout visits states slightly off the expert's own path.
    """
    if noise > 0 and rng is None:
        raise ValueError("noisy rollouts need a random stream")
    states, actions = [state], []
    for _ in range(max_steps):
        if state.success:
            break
        a = expert_action(state)
        executed = a + noise * rng.standard_normal(a.shape) if noise > 0 else a
        state = step(state, executed)
        actions.append(a)
        states.append(state)
    return states, actions
