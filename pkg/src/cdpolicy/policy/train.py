"""Teacher training with the standard noising objective."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numkit as nk
from ..diffusion import NoiseSchedule, PredictionType, forward_noise
from ..manipenv.dataset import Dataset
from .checkpoint import Checkpoint, config_hash
from .network import Architecture, DenoiseNetwork

log = logging.getLogger(__name__)


@dataclass
class TeacherConfig:
    prediction_type: str = "sample"
    T: int = 100
    epochs: int = 3000
    batch_size: int = 128
    lr: float = 5e-5
    warmup: int = 500
    weight_decay: float = 1e-6
    activation: str = "mish"
    width: int = 256
    n_blocks: int = 3
    seed: int = 0
    arch_overrides: dict = field(default_factory=dict)

    def architecture(self, ds: Dataset) -> Architecture:
        return Architecture(
            n_points=ds.n_points, point_dim=ds.points.shape[-1], horizon=ds.horizon, action_dim=ds.action_dim,
            n_obs_steps=ds.n_obs_steps,
            width=self.width, n_blocks=self.n_blocks, activation=self.activation,
            prediction_type=PredictionType(self.prediction_type).value, **self.arch_overrides,
        )


def iterations_per_epoch(n_samples: int, batch_size: int) -> int:
    return max(1, -(-n_samples // batch_size))


def epoch_batches(rng: np.random.Generator, n_samples: int, batch_size: int):
    order = rng.permutation(n_samples)
    return [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]


def denoising_loss(net: DenoiseNetwork, pts, poses, a0, t, noise, sched: NoiseSchedule):
    """Squared error between the network output and its target (clean chunk or noise)."""
    a_t = forward_noise(a0, t, noise, sched)
    p = net.leaves()
    cond = net.encode(pts, poses, p)
    pred = net.denoise(a_t, t, cond, p)
    target = a0 if net.prediction_type is PredictionType.SAMPLE else noise
    loss = nk.mse(pred, nk.Tensor(target))
    return float(loss.data), nk.grad(loss, p)


def teacher_train(ds: Dataset, config: TeacherConfig, callback=None):
    """Train a denoising network on ``ds``; returns (Checkpoint, per-epoch log rows).

    ``callback(epoch, net)`` runs after every epoch when given.
    """
    sched = NoiseSchedule(config.T)
    arch = config.architecture(ds)
    net = DenoiseNetwork.initialize(arch, nk.stream(config.seed, "teacher-init"))
    pts, poses, acts = ds.samples()
    n = acts.shape[0]
    iters = iterations_per_epoch(n, config.batch_size)
    total = max(1, config.epochs * iters)
    lrs = nk.LrSchedule(config.lr, min(config.warmup, total), total)
    opt = nk.AdamWState(lr=config.lr, weight_decay=config.weight_decay)
    shuffle = nk.stream(config.seed, "teacher-shuffle")
    noise_rng = nk.stream(config.seed, "teacher-noise")
    rows = []
    it = 0
    for epoch in range(config.epochs):
        losses = []
        for idx in epoch_batches(shuffle, n, config.batch_size):
            t = noise_rng.integers(1, sched.T + 1, size=idx.size)
            noise = noise_rng.standard_normal(acts[idx].shape)
            loss, grads = denoising_loss(net, pts[idx], poses[idx], acts[idx], t, noise, sched)
            opt.lr = lrs.lr_at(it)
            net.set_params(nk.adamw_step(opt, net.params, grads))
            losses.append(loss)
            it += 1
        rows.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": opt.lr})
        if callback is not None:
            callback(epoch, net)
    provenance = {"seed": config.seed, "epochs": config.epochs, "config_hash": config_hash(asdict(config)),
                  "role": "teacher", "dataset_seed": ds.seed, "n_demos": ds.n_demos}
    return Checkpoint.from_network(net, sched, ds.normalizer, ds.task, provenance=provenance), rows
