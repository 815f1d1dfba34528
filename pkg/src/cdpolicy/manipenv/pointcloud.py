"""Silhouette point clouds and farthest point sampling."""

from __future__ import annotations

import numpy as np

from .world import WorldState

N_SILHOUETTE = 48


def _ring(radius: float, n: int) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _cross(arm: float, n: int) -> np.ndarray:
    s = np.linspace(-arm, arm, n // 2)
    z = np.zeros_like(s)
    return np.concatenate([np.stack([s, z], 1), np.stack([z, s], 1)])


def _square(half: float, n: int) -> np.ndarray:
    k = n // 4
    s = np.linspace(-half, half, k, endpoint=False)
    h = np.full(k, half)
    return np.concatenate([
        np.stack([s, -h], 1), np.stack([h, s], 1), np.stack([-s, h], 1), np.stack([-h, -s], 1),
    ])


EFFECTOR_SHAPE = _ring(0.05, N_SILHOUETTE)
GOAL_SHAPE = _cross(0.06, N_SILHOUETTE)
BLOCK_SHAPE = _square(0.05, N_SILHOUETTE)


# per-point object label carried next to the coordinates
EFFECTOR_LABEL, GOAL_LABEL, BLOCK_LABEL = -1.0, 0.0, 1.0


def _labelled(xy: np.ndarray, label: float) -> np.ndarray:
    return np.concatenate([np.clip(xy, -1.0, 1.0), np.full((len(xy), 1), label)], axis=1)


def raw_cloud(state: WorldState) -> np.ndarray:
    """Effector, goal and block outlines placed in the world, rows (x, y, object label)."""
    parts = [_labelled(state.effector + EFFECTOR_SHAPE, EFFECTOR_LABEL),
             _labelled(state.goal + GOAL_SHAPE, GOAL_LABEL)]
    if state.block is not None:
        parts.append(_labelled(state.block + BLOCK_SHAPE, BLOCK_LABEL))
    return np.concatenate(parts)


def fps_indices(points: np.ndarray, n_samples: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling over the last two axes of ``points`` (..., N, D).

    Selection starts at ``start``; ties go to the lowest index. Returns indices
    (..., n_samples) in selection order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[-2]
    if not 1 <= n_samples <= n:
        raise ValueError(f"cannot sample {n_samples} points from a cloud of {n}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} outside cloud of {n}")
    batch = points.shape[:-2]
    out = np.empty(batch + (n_samples,), dtype=np.int64)
    sel = np.full(batch, start, dtype=np.int64)
    mind = np.full(batch + (n,), np.inf)
    for i in range(n_samples):
        out[..., i] = sel
        chosen = np.take_along_axis(points, sel[..., None, None], axis=-2)
        d = np.sum((points - chosen) ** 2, axis=-1)
        mind = np.minimum(mind, d)
        sel = np.argmax(mind, axis=-1)
    return out


def fps_downsample(points: np.ndarray, n_samples: int, start: int = 0) -> np.ndarray:
    idx = fps_indices(points, n_samples, start)
    return np.take_along_axis(np.asarray(points, dtype=np.float64), idx[..., None], axis=-2)


def observe_points(states, n_points: int = 64) -> np.ndarray:
    """Clouds for a list of same-task states, FPS-downsampled on the coordinates; (B, n_points, 3)."""
    clouds = np.stack([raw_cloud(s) for s in states])
    idx = fps_indices(clouds[..., :2], n_points)
    return np.take_along_axis(clouds, idx[..., None], axis=-2)
