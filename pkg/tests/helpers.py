"""Shared test oracles: stand-in networks, a finite-difference gradient checker and plain-loop FPS."""

import math

import numpy as np

from cdpolicy import numkit as nk
from cdpolicy.diffusion import PredictionType
from cdpolicy.numkit import Tensor


def scalar_alpha_bar(t, T=100, s=0.008):
    """Squared-cosine alpha-bar rebuilt from per-step betas, one timestep at a time."""
    def f(u):
        return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

    ab = 1.0
    for i in range(1, t + 1):
        ab *= 1.0 - min(1.0 - f(i / T) / f((i - 1) / T), 0.999)
    return ab


def _zero_condition(points):
    return nk.Tensor(np.zeros((len(points), 1)))


class ConstNet:
    """Predicts the same value everywhere."""

    def __init__(self, value, chunk_shape=(4, 2), kind="sample"):
        self.value = float(value)
        self.chunk_shape = chunk_shape
        self.prediction_type = PredictionType(kind)
        self.n_evals = 0

    def encode(self, points, poses, p=None):
        return _zero_condition(points)

    def predict(self, a_t, t, cond):
        self.n_evals += 1
        return np.full(np.shape(a_t), self.value)


class OracleNet:
    """Knows the clean chunk ``a0``; answers with the exact sample or noise for any ``a_t``."""

    def __init__(self, a0, sched, kind="epsilon"):
        self.a0 = np.asarray(a0, dtype=np.float64)
        self.sched = sched
        self.chunk_shape = self.a0.shape[1:]
        self.prediction_type = PredictionType(kind)
        self.n_evals = 0

    def encode(self, points, poses, p=None):
        return _zero_condition(points)

    def predict(self, a_t, t, cond):
        self.n_evals += 1
        if self.prediction_type is PredictionType.SAMPLE:
            return self.a0.copy()
        ab = self.sched.alpha_bars[np.asarray(t)].reshape(-1, *([1] * (self.a0.ndim - 1)))
        return (a_t - np.sqrt(ab) * self.a0) / np.sqrt(1.0 - ab)


class ConsistentHead:
    """Sample-type head whose consistency output is ``value + c_out(t) * shift``.

    With ``shift = 0`` it maps every noisy chunk straight to ``value``, which is
    exactly self-consistent along the path of a ``ConstNet(value)`` teacher.
    ``shift`` is the only trainable parameter.
    """

    prediction_type = PredictionType.SAMPLE

    def __init__(self, value, csched, batch, chunk_shape=(4, 2)):
        self.value = float(value)
        self.csched = csched
        self.chunk_shape = chunk_shape
        self.arch = ("consistent-head", chunk_shape)
        self.params = {"shift": np.zeros((batch, *chunk_shape))}
        self.n_evals = 0

    def leaves(self):
        return nk.leaves(self.params, requires_grad=True)

    def set_params(self, params):
        self.params = params

    def encode(self, points, poses, p=None):
        return _zero_condition(points)

    def denoise(self, a_t, t, cond, p=None):
        self.n_evals += 1
        a_t = np.asarray(a_t, dtype=np.float64)
        trail = (1,) * (a_t.ndim - 1)
        cs = self.csched.c_skip(t).reshape(-1, *trail)
        co = self.csched.c_out(t).reshape(-1, *trail)
        base = np.divide(self.value - cs * a_t, co, out=np.zeros_like(a_t), where=co > 0)
        if p is not None:
            return nk.Tensor(base) + p["shift"]
        shift = self.params["shift"]
        if shift.shape != base.shape:
            assert not shift.any(), "a non-zero shift needs the full batch"
            shift = 0.0
        return nk.Tensor(base + shift)


def central_diff(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``arrays`` (mutated in place)."""
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def max_rel_err(a, b, loss_scale=1.0):
    # central differences carry ~eps * |loss| / h absolute noise, so tiny entries are floored
    floor = 1e-6 * (1.0 + abs(loss_scale) + float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


OPS = ["tanh", "mish", "relu", "mul", "add", "sub", "scale", "matmul", "concat", "maxpool", "reshape"]


def random_graph(rng: np.random.Generator, n: int | None = None):
    """A random small graph over two parameter matrices; returns (arrays, loss builder)."""
    n = int(rng.integers(2, 5)) if n is None else n
    arrays = {"a": rng.normal(size=(n, n)), "b": rng.normal(size=(n, n))}
    ops = rng.choice(OPS, size=int(rng.integers(2, 6)))
    x0 = rng.normal(size=(n, n))

    def build(p):
        h = nk.matmul(Tensor(x0), p["a"])
        for op in ops:
            if op == "tanh":
                h = nk.tanh(h)
            elif op == "mish":
                h = nk.mish(h)
            elif op == "relu":
                # shift keeps pre-activations away from the kink
                h = nk.relu(h + Tensor(np.full(h.shape, 5.0)))
            elif op == "mul":
                h = nk.mul(h, p["b"])
            elif op == "add":
                h = nk.add(h, p["b"])
            elif op == "sub":
                h = nk.sub(p["b"], h)
            elif op == "scale":
                h = nk.scale(h, 0.7)
            elif op == "matmul":
                h = nk.matmul(h, p["b"])
            elif op == "concat":
                h = nk.affine(nk.concat([h, p["b"]], axis=1), Tensor(np.vstack([np.eye(n), np.eye(n)])),
                              Tensor(np.zeros(n)))
            elif op == "maxpool":
                pooled = nk.max_pool(nk.reshape(h, (1, n, n)), axis=1)
                h = nk.add(h, nk.matmul(Tensor(np.ones((n, 1))), pooled))
            elif op == "reshape":
                h = nk.reshape(nk.reshape(h, (n * n,)), (n, n))
        return nk.add(nk.mean(h), nk.tsum(nk.mul(h, h)))

    return arrays, build


def greedy_fps_oracle(points, k, start=0):
    """Plain-loop farthest point sampling: each pick maximizes its distance to the chosen set."""
    chosen = [start]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i in range(len(points)):
            d = min(sum((points[i][c] - points[j][c]) ** 2 for c in range(len(points[i]))) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen
