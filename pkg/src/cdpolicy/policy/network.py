"""Conditional denoising network F(a_t, t, points, poses).

Point clouds go through a shared per-point MLP and a max-pool (one embedding per
history frame, then a projection to ``embed_dim``); the stacked pose history goes
through a small MLP. The trunk is a residual MLP over
``[flattened a_t | sinusoidal time embedding | condition]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import numkit as nk
from ..diffusion import PredictionType
from ..numkit import Tensor


@dataclass(frozen=True)
class Architecture:
    n_points: int = 64
    point_dim: int = 3
    pose_dim: int = 3
    n_obs_steps: int = 2
    horizon: int = 4
    action_dim: int = 2
    embed_dim: int = 64
    point_hidden: int = 64
    time_dim: int = 32
    width: int = 256
    n_blocks: int = 3
    activation: str = "mish"
    prediction_type: str = "sample"
    trunk: str = "mlp"

    def __post_init__(self):
        PredictionType(self.prediction_type)
        nk.activation(self.activation)
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        e, hp, w = self.embed_dim, self.point_hidden, self.width
        flat = self.horizon * self.action_dim
        shapes = {
            "point.l1.w": (self.point_dim, hp),
            "point.l1.b": (hp,),
            "point.l2.w": (hp, hp),
            "point.l2.b": (hp,),
            "point.proj.w": (self.n_obs_steps * hp, e),
            "point.proj.b": (e,),
            "pose.l1.w": (self.n_obs_steps * self.pose_dim, e),
            "pose.l1.b": (e,),
            "pose.l2.w": (e, e),
            "pose.l2.b": (e,),
            "trunk.in.w": (flat + self.time_dim + 2 * e, w),
            "trunk.in.b": (w,),
        }
        for i in range(self.n_blocks):
            shapes[f"trunk.block{i}.l1.w"] = (w, w)
            shapes[f"trunk.block{i}.l1.b"] = (w,)
            shapes[f"trunk.block{i}.l2.w"] = (w, w)
            shapes[f"trunk.block{i}.l2.b"] = (w,)
        shapes["trunk.out.w"] = (w, flat)
        shapes["trunk.out.b"] = (flat,)
        return shapes


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding with geometric frequencies, shape (B, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class DenoiseNetwork:
    def __init__(self, arch: Architecture, params: dict[str, np.ndarray]):
        expected = arch.param_shapes()
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter names do not match architecture (missing={missing}, extra={extra})")
        for k, shape in expected.items():
            if tuple(params[k].shape) != shape:
                raise nk.ShapeError(f"parameter {k!r} has shape {params[k].shape}, expected {shape}")
        self.arch = arch
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.n_evals = 0
        self._consts: dict[str, Tensor] | None = None

    @classmethod
    def initialize(cls, arch: Architecture, rng: np.random.Generator) -> "DenoiseNetwork":
        params = {}
        for name, shape in arch.param_shapes().items():
            fan_in = shape[0] if name.endswith(".w") else arch.param_shapes()[name[:-2] + ".w"][0]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(arch, params)

    @property
    def prediction_type(self) -> PredictionType:
        return PredictionType(self.arch.prediction_type)

    @property
    def chunk_shape(self) -> tuple[int, int]:
        return (self.arch.horizon, self.arch.action_dim)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "DenoiseNetwork":
        return DenoiseNetwork(self.arch, {k: v.copy() for k, v in self.params.items()})

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.params = params
        self._consts = None

    def leaves(self) -> dict[str, Tensor]:
        """Fresh trainable leaves for one gradient computation."""
        return nk.leaves(self.params, requires_grad=True)

    def _p(self, p):
        if p is not None:
            return p
        if self._consts is None or any(self._consts[k].data is not v for k, v in self.params.items()):
            self._consts = nk.leaves(self.params, requires_grad=False)
        return self._consts

    # ---------------------------------------------------------------- encoders

    def encode(self, points, poses, p=None) -> Tensor:
        """Condition vector ``[point embedding | pose embedding]``, shape (B, 2 * embed_dim)."""
        a = self.arch
        p = self._p(p)
        points = np.asarray(points, dtype=np.float64)
        poses = np.asarray(poses, dtype=np.float64)
        if points.ndim != 4 or points.shape[1:] != (a.n_obs_steps, a.n_points, a.point_dim):
            raise nk.ShapeError(
                f"encode: points must be (B, {a.n_obs_steps}, {a.n_points}, {a.point_dim}), got {points.shape}"
            )
        if poses.shape != (points.shape[0], a.n_obs_steps, a.pose_dim):
            raise nk.ShapeError(
                f"encode: poses must be ({points.shape[0]}, {a.n_obs_steps}, {a.pose_dim}), got {poses.shape}"
            )
        B, S, P, D = points.shape
        x = Tensor(points.reshape(B * S * P, D))
        h = nk.relu(nk.affine(x, p["point.l1.w"], p["point.l1.b"]))
        h = nk.relu(nk.affine(h, p["point.l2.w"], p["point.l2.b"]))
        h = nk.max_pool(nk.reshape(h, (B * S, P, a.point_hidden)), axis=1)
        h = nk.reshape(h, (B, S * a.point_hidden))
        pt = nk.affine(h, p["point.proj.w"], p["point.proj.b"])

        act = nk.activation(a.activation)
        q = Tensor(poses.reshape(B, S * a.pose_dim))
        q = act(nk.affine(q, p["pose.l1.w"], p["pose.l1.b"]))
        q = nk.affine(q, p["pose.l2.w"], p["pose.l2.b"])
        return nk.concat([pt, q], axis=1)

    # ---------------------------------------------------------------- trunk

    def denoise(self, a_t, t, cond, p=None) -> Tensor:
        """Raw network output with the shape of ``a_t`` (B, H, A)."""
        a = self.arch
        p = self._p(p)
        a_t = np.asarray(a_t, dtype=np.float64) if not isinstance(a_t, Tensor) else a_t
        shape = a_t.shape
        if tuple(shape[1:]) != self.chunk_shape:
            raise nk.ShapeError(f"denoise: action chunk must be (B, {a.horizon}, {a.action_dim}), got {shape}")
        B = shape[0]
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        if cond.shape != (B, 2 * a.embed_dim):
            raise nk.ShapeError(f"denoise: condition must be ({B}, {2 * a.embed_dim}), got {cond.shape}")
        t = np.broadcast_to(np.asarray(t), (B,))
        x = nk.reshape(a_t, (B, -1)) if isinstance(a_t, Tensor) else Tensor(a_t.reshape(B, -1))
        temb = Tensor(time_embedding(t, a.time_dim))
        act = nk.activation(a.activation)
        h = nk.affine(nk.concat([x, temb, cond], axis=1), p["trunk.in.w"], p["trunk.in.b"])
        for i in range(a.n_blocks):
            r = nk.affine(act(h), p[f"trunk.block{i}.l1.w"], p[f"trunk.block{i}.l1.b"])
            r = nk.affine(act(r), p[f"trunk.block{i}.l2.w"], p[f"trunk.block{i}.l2.b"])
            h = h + r
        out = nk.affine(act(h), p["trunk.out.w"], p["trunk.out.b"])
        self.n_evals += 1
        return nk.reshape(out, shape)

    # ---------------------------------------------------------------- inference

    def encode_np(self, points, poses) -> np.ndarray:
        with nk.no_grad():
            return self.encode(points, poses).data

    def predict(self, a_t, t, cond) -> np.ndarray:
        with nk.no_grad():
            return self.denoise(a_t, t, cond).data
