"""Expert demonstrations, min/max normalization and the on-disk dataset format.

On disk a dataset is a directory holding ``manifest.json`` plus one raw
little-endian float32 file per field (``points.f32``, ``poses.f32``,
``actions.f32``). Arrays are rounded to float32 when generated so the
in-memory and reloaded datasets agree exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numkit import stream
from .pointcloud import observe_points
from .world import action_dim, check_task, expert_rollout, reset

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
FIELDS = ("points", "poses", "actions")


def f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass
class Normalizer:
    """Per-dimension affine map of [min, max] onto [-1, 1]; constant dims map to 0."""

    mins: dict[str, np.ndarray] = field(default_factory=dict)
    maxs: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fit(cls, arrays: dict[str, np.ndarray]) -> "Normalizer":
        mins, maxs = {}, {}
        for k, v in arrays.items():
            flat = np.asarray(v, dtype=np.float64).reshape(-1, v.shape[-1])
            mins[k] = flat.min(axis=0)
            maxs[k] = flat.max(axis=0)
        return cls(mins, maxs)

    def normalize(self, key: str, x) -> np.ndarray:
        lo, hi = self.mins[key], self.maxs[key]
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        y = 2.0 * (np.asarray(x, dtype=np.float64) - lo) / safe - 1.0
        return np.where(span > 0, y, 0.0)

    def denormalize(self, key: str, y) -> np.ndarray:
        lo, hi = self.mins[key], self.maxs[key]
        span = hi - lo
        return np.where(span > 0, (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * span + lo, lo)

    def to_dict(self) -> dict:
        return {k: {"min": self.mins[k].tolist(), "max": self.maxs[k].tolist()} for k in sorted(self.mins)}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            {k: np.array(v["min"], dtype=np.float64) for k, v in d.items()},
            {k: np.array(v["max"], dtype=np.float64) for k, v in d.items()},
        )


@dataclass
class Demonstration:
    observations: list  # (points (S, P, 3), poses (S, 3)) per decision step
    chunks: list  # (H, A) raw expert actions, zero-padded past the end
    success: bool
    seed: int


@dataclass
class Dataset:
    task: str
    points: np.ndarray  # (F, P, 3) raw (x, y, object label), one frame per state before each action
    poses: np.ndarray  # (F, 3)
    actions: np.ndarray  # (F, A)
    episode_ends: list[int]
    demo_seeds: list[int]
    normalizer: Normalizer
    seed: int
    horizon: int = 4
    n_obs_steps: int = 2
    skipped_seeds: list[int] = field(default_factory=list)
    action_noise: float = 0.0

    @property
    def n_demos(self) -> int:
        return len(self.episode_ends)

    @property
    def n_points(self) -> int:
        return self.points.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def _index(self):
        """(frame index, history frame indices, chunk frame indices, valid mask) per sample."""
        starts = [0] + self.episode_ends[:-1]
        hist, chunk, valid = [], [], []
        for lo, hi in zip(starts, self.episode_ends):
            for f in range(lo, hi):
                hist.append([max(lo, f - self.n_obs_steps + 1 + j) for j in range(self.n_obs_steps)])
                idx = [min(f + j, hi - 1) for j in range(self.horizon)]
                chunk.append(idx)
                valid.append([f + j < hi for j in range(self.horizon)])
        return np.array(hist), np.array(chunk), np.array(valid)

    def raw_samples(self):
        hist, chunk, valid = self._index()
        acts = self.actions[chunk] * valid[..., None]
        return self.points[hist], self.poses[hist], acts

    def samples(self):
        """Normalized training samples: points (M, S, P, 3), poses (M, S, 3), chunks (M, H, A)."""
        pts, poses, acts = self.raw_samples()
        n = self.normalizer
        return n.normalize("points", pts), n.normalize("poses", poses), n.normalize("actions", acts)

    def demonstrations(self) -> list[Demonstration]:
        pts, poses, acts = self.raw_samples()
        starts = [0] + self.episode_ends[:-1]
        return [
            Demonstration(
                observations=[(pts[f], poses[f]) for f in range(lo, hi)],
                chunks=[acts[f] for f in range(lo, hi)],
                success=True,
                seed=s,
            )
            for lo, hi, s in zip(starts, self.episode_ends, self.demo_seeds)
        ]

    def subset(self, n_demos: int) -> "Dataset":
        """First ``n_demos`` episodes; keeps the normalizer."""
        end = self.episode_ends[n_demos - 1]
        return Dataset(
            self.task, self.points[:end], self.poses[:end], self.actions[:end],
            self.episode_ends[:n_demos], self.demo_seeds[:n_demos], self.normalizer, self.seed,
            self.horizon, self.n_obs_steps, list(self.skipped_seeds), self.action_noise,
        )


def generate_dataset(task: str, n_demos: int, seed: int, *, n_points: int = 64, horizon: int = 4,
                     n_obs_steps: int = 2, max_steps: int = 100, action_noise: float = 0.0) -> Dataset:
    """Roll out the scripted expert from seeded starts until ``n_demos`` succeed.

    ``action_noise`` perturbs the executed actions (labels stay clean).
    """
    check_task(task)
    if n_demos < 1:
        raise ValueError("n_demos must be at least 1")
    pts, poses, acts, ends, seeds, skipped = [], [], [], [], [], []
    attempt = 0
    total = 0
    while len(ends) < n_demos:
        s0 = reset(task, stream(seed, "demo", attempt))
        states, actions = expert_rollout(s0, max_steps, action_noise, stream(seed, "demo-noise", attempt))
        if not states[-1].success:
            log.warning("expert failed on %s demo seed %d; skipping", task, attempt)
            skipped.append(attempt)
            attempt += 1
            continue
        visited = states[:-1]
        pts.append(observe_points(visited, n_points))
        poses.append(np.stack([s.pose() for s in visited]))
        acts.append(np.stack(actions))
        total += len(actions)
        ends.append(total)
        seeds.append(attempt)
        attempt += 1
    points = f32(np.concatenate(pts))
    pose_arr = f32(np.concatenate(poses))
    act_arr = f32(np.concatenate(acts))
    ds = Dataset(task, points, pose_arr, act_arr, ends, seeds, Normalizer(), seed, horizon,
                 n_obs_steps, skipped, action_noise)
    p, q, a = ds.raw_samples()
    ds.normalizer = Normalizer.fit({"points": p, "poses": q, "actions": a})
    return ds


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = {}
    for name in FIELDS:
        arr = getattr(ds, name)
        fname = f"{name}.f32"
        (out / fname).write_bytes(np.asarray(arr, dtype="<f4").tobytes())
        fields[name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f4"}
    manifest = {
        "format_version": FORMAT_VERSION,
        "task": ds.task,
        "seed": ds.seed,
        "action_noise": ds.action_noise,
        "n_demos": ds.n_demos,
        "n_frames": int(ds.actions.shape[0]),
        "episode_ends": list(map(int, ds.episode_ends)),
        "demo_seeds": list(map(int, ds.demo_seeds)),
        "skipped_seeds": list(map(int, ds.skipped_seeds)),
        "dims": {
            "n_points": ds.n_points,
            "point_dim": int(ds.points.shape[2]),
            "pose_dim": int(ds.poses.shape[1]),
            "action_dim": ds.action_dim,
        },
        "horizon": ds.horizon,
        "n_obs_steps": ds.n_obs_steps,
        "normalizer": ds.normalizer.to_dict(),
        "fields": fields,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest.get('format_version')!r}")
    arrays = {}
    for name in FIELDS:
        spec = manifest["fields"][name]
        raw = np.frombuffer((root / spec["file"]).read_bytes(), dtype="<f4")
        shape = tuple(spec["shape"])
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"{spec['file']}: expected {int(np.prod(shape))} floats, found {raw.size}")
        arrays[name] = raw.reshape(shape).astype(np.float64)
    if arrays["actions"].shape[1] != action_dim(manifest["task"]):
        raise ValueError("action dimension does not match task")
    return Dataset(
        manifest["task"], arrays["points"], arrays["poses"], arrays["actions"],
        manifest["episode_ends"], manifest["demo_seeds"], Normalizer.from_dict(manifest["normalizer"]),
        manifest["seed"], manifest["horizon"], manifest["n_obs_steps"], manifest["skipped_seeds"],
        manifest.get("action_noise", 0.0),
    )
