"""Consistency parameterization, skipping-step solver estimate, distillation loss and EMA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..diffusion import CLIP, NoiseSchedule, PredictionType, _check_t, forward_noise, solver_step
from ..numkit import Tensor


@dataclass(frozen=True)
class ConsistencySchedule:
    """Boundary-respecting blend ``f = c_skip(t) a_t + c_out(t) a0(F)``.

    ``c_skip(t) = sigma_d^2 / (b^2 t^2 + sigma_d^2)`` and
    ``c_out(t) = b t / sqrt(b^2 t^2 + sigma_d^2)`` with ``b = boundary_scale``,
    so ``c_skip(0) = 1`` and ``c_out(0) = 0`` exactly.
    """

    noise: NoiseSchedule
    sigma_d: float = 0.5
    boundary_scale: float | None = None

    def __post_init__(self):
        if self.boundary_scale is None:
            object.__setattr__(self, "boundary_scale", 10.0 / self.noise.T)
        if self.sigma_d <= 0 or self.boundary_scale <= 0:
            raise ValueError("sigma_d and boundary_scale must be positive")

    @property
    def T(self) -> int:
        return self.noise.T

    def c_skip(self, t) -> np.ndarray:
        bt = self.boundary_scale * np.asarray(t, dtype=np.float64)
        return self.sigma_d**2 / (bt * bt + self.sigma_d**2)

    def c_out(self, t) -> np.ndarray:
        bt = self.boundary_scale * np.asarray(t, dtype=np.float64)
        return bt / np.sqrt(bt * bt + self.sigma_d**2)

    def to_dict(self) -> dict:
        return {"sigma_d": self.sigma_d, "boundary_scale": self.boundary_scale}

    @classmethod
    def from_dict(cls, d: dict, noise: NoiseSchedule) -> "ConsistencySchedule":
        return cls(noise, float(d["sigma_d"]), float(d["boundary_scale"]))


TIMESTEP_GRIDS = ("aligned", "uniform")


@dataclass
class DistillConfig:
    """Distillation hyperparameters.

    ``timestep_grid`` picks where ``n`` is drawn: ``"aligned"`` uses multiples
    of ``k`` so every chain of skipping steps ends on the boundary ``t = 0``;
    ``"uniform"`` uses every integer in ``[0, T - k]``, which leaves chains with
    ``n mod k != 0`` ending on timesteps the online network is never fit at.
    """

    k: int = 10
    mu: float = 0.95
    batch_size: int = 128
    epochs: int = 3000
    lr: float = 5e-5
    warmup: int = 500
    weight_decay: float = 1e-6
    sigma_d: float = 0.5
    boundary_scale: float | None = None
    eval_every: int = 200
    eval_episodes: int = 20
    probe_size: int = 1024
    seed: int = 0
    timestep_grid: str = "aligned"

    def validate(self, T: int) -> None:
        if not 1 <= self.k <= T - 1:
            raise ValueError(f"skipping interval k must lie in [1, {T - 1}]")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("EMA rate mu must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if self.timestep_grid not in TIMESTEP_GRIDS:
            raise ValueError(f"timestep_grid must be one of {TIMESTEP_GRIDS}")


@dataclass
class NetworkTriplet:
    teacher: object
    online: object
    target: object

    def __post_init__(self):
        if self.online.arch != self.target.arch:
            raise ValueError("online and target networks must share an architecture")


def _blend_terms(net, a_t: np.ndarray, t: np.ndarray, csched: ConsistencySchedule):
    """Split ``f`` into a constant part and a per-row multiplier of the raw output F.

    Sample heads: ``f = c_skip a_t + c_out F``. Noise heads go through
    ``a0 = (a_t - sqrt(1 - ab) F) / sqrt(ab)`` first. Rows at ``t = 0`` reduce to
    ``f = a_t`` exactly.
    """
    trail = (1,) * (a_t.ndim - 1)
    cs = csched.c_skip(t).reshape(t.shape + trail)
    co = csched.c_out(t).reshape(t.shape + trail)
    if net.prediction_type is PredictionType.SAMPLE:
        const = cs * a_t
        mult = co
    else:
        ab = csched.noise.alpha_bars[t].reshape(t.shape + trail)
        s0, s1 = np.sqrt(ab), np.sqrt(1.0 - ab)
        const = (cs + co / s0) * a_t
        mult = -co * s1 / s0
    return const, np.broadcast_to(mult, a_t.shape)


def consistency_output(net, a_t, t, cond, csched: ConsistencySchedule, p=None) -> Tensor:
    """Differentiable, unclipped ``f_theta(a_t, t)`` (records a graph when ``p`` are leaves)."""
    a_t = np.asarray(a_t, dtype=np.float64)
    t = _check_t(np.broadcast_to(np.asarray(t), a_t.shape[:1]), 0, csched.T, "consistency_fn")
    raw = net.denoise(a_t, t, cond, p)
    const, mult = _blend_terms(net, a_t, t, csched)
    return Tensor(const) + nk.mul(Tensor(mult), raw)


def consistency_fn(net, a_t, t, cond, csched: ConsistencySchedule, clip: bool = True) -> np.ndarray:
    """One-jump estimate of the clean chunk; identity in ``a_t`` at ``t = 0``."""
    a_t = np.asarray(a_t, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t), a_t.shape[:1])
    with nk.no_grad():
        out = consistency_output(net, a_t, t, cond, csched).data
    boundary = (t == 0).reshape(t.shape + (1,) * (a_t.ndim - 1))
    out = np.where(boundary, a_t, out)
    return np.clip(out, -CLIP, CLIP) if clip else out


def ode_solver_estimate(teacher, a_nk, t_nk, t_n, cond, sched: NoiseSchedule) -> np.ndarray:
    """Teacher's deterministic DDIM jump from ``t_nk`` down to ``t_n`` (one evaluation)."""
    t_nk = np.broadcast_to(np.asarray(t_nk), a_nk.shape[:1])
    t_n = np.broadcast_to(np.asarray(t_n), a_nk.shape[:1])
    if np.any(t_n < 0):
        raise ValueError("ode_solver_estimate: t_n must be non-negative")
    if np.any(t_n >= t_nk):
        raise ValueError("ode_solver_estimate: t_n must lie below t_{n+k}")
    return solver_step(teacher, a_nk, t_nk, t_n, cond, sched)


@dataclass
class LossOutput:
    loss: float
    grads: dict[str, np.ndarray]
    n: np.ndarray
    online_out: np.ndarray
    target_out: np.ndarray


def sample_n(rng, size: int, T: int, k: int, grid: str = "aligned") -> np.ndarray:
    """Lower timesteps ``n`` of the skipping pairs ``(n + k, n)``."""
    if grid == "aligned":
        return k * rng.integers(0, (T - k) // k + 1, size=size)
    return rng.integers(0, T - k + 1, size=size)


def mcd_loss(triplet: NetworkTriplet, a0, points, poses, rng, csched: ConsistencySchedule,
             config: DistillConfig, *, n=None, noise=None) -> LossOutput:
    """Consistency distillation loss and its gradient for the online network.

    ``a_{n+k}`` is ``a0`` noised to ``n + k``; the teacher jumps it to ``n``; the
    target network maps that to its clean estimate. The whole target branch runs
    without recording, so gradients reach only the online parameters.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    B = a0.shape[0]
    T, k = csched.T, config.k
    if n is None:
        n = sample_n(rng, B, T, k, config.timestep_grid)
    if noise is None:
        noise = rng.standard_normal(a0.shape)
    n = np.asarray(n, dtype=np.int64)
    a_nk = forward_noise(a0, n + k, noise, csched.noise)

    with nk.no_grad():
        cond_teacher = triplet.teacher.encode(points, poses).data
        a_n = ode_solver_estimate(triplet.teacher, a_nk, n + k, n, cond_teacher, csched.noise)
        cond_target = triplet.target.encode(points, poses).data
        target_out = consistency_fn(triplet.target, a_n, n, cond_target, csched, clip=True)

    leaves = triplet.online.leaves()
    cond = triplet.online.encode(points, poses, leaves)
    online = consistency_output(triplet.online, a_nk, n + k, cond, csched, leaves)
    # overshoot past a bound the target already sits on is invisible after clipping
    keep = ~(((online.data >= CLIP) & (target_out >= CLIP)) | ((online.data <= -CLIP) & (target_out <= -CLIP)))
    mask = Tensor(keep.astype(np.float64))
    loss = nk.mse(nk.mul(mask, online), Tensor(keep * target_out))
    grads = nk.grad(loss, leaves)
    return LossOutput(float(loss.data), grads, n, online.data, target_out)


def ema_update(triplet: NetworkTriplet, mu: float) -> dict[str, np.ndarray]:
    """``target <- mu * target + (1 - mu) * online``, elementwise."""
    if not 0.0 <= mu < 1.0:
        raise ValueError("EMA rate mu must lie in [0, 1)")
    online, target = triplet.online, triplet.target
    if online.arch != target.arch:
        raise ValueError("EMA between networks of different architectures")
    new = {k: mu * target.params[k] + (1.0 - mu) * online.params[k] for k in target.params}
    target.set_params(new)
    return new


def self_consistency(net, teacher, a0, points, poses, csched: ConsistencySchedule,
                     rng: np.random.Generator, k: int) -> float:
    """Mean ``||f(a_t, t) - f(a_s, s)||^2`` over probe pairs on one teacher ODE path.

    The path is the one distillation learns: teacher solver jumps of ``k``.
    For each probe ``a_t`` is ``a0`` noised to a random multiple ``t`` of ``k``;
    ``a_s`` is reached from ``a_t`` by jumps down to a random multiple
    ``s`` in ``[k, t - k]``. Pairs ending at ``s = 0`` are left out because
    ``f`` is the identity there by construction.
    """
    T = csched.T
    if k < 1 or 2 * k > T:
        raise ValueError(f"need 1 <= k <= T / 2, got k={k}, T={T}")
    a0 = np.asarray(a0, dtype=np.float64)
    B = a0.shape[0]
    t = k * rng.integers(2, T // k + 1, size=B)
    s = k * np.array([rng.integers(1, ti // k) for ti in t])
    a = forward_noise(a0, t, rng.standard_normal(a0.shape), csched.noise)
    with nk.no_grad():
        cond_t = teacher.encode(points, poses).data
        cond_n = net.encode(points, poses).data
        f_t = consistency_fn(net, a, t, cond_n, csched)
        cur = t.copy()
        a_s = a.copy()
        while np.any(cur > s):
            moving = cur > s
            nxt = np.where(moving, cur - k, cur)
            a_s[moving] = solver_step(teacher, a_s[moving], cur[moving], nxt[moving], cond_t[moving], csched.noise)
            cur = nxt
        f_s = consistency_fn(net, a_s, s, cond_n, csched)
    return float(np.mean(np.sum((f_t - f_s) ** 2, axis=tuple(range(1, a0.ndim)))))
