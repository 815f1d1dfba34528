"""Three-network consistency distillation loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numkit as nk
from ..manipenv.dataset import Dataset, generate_dataset
from ..manipenv.evaluate import evaluate_policy
from ..policy.checkpoint import Checkpoint, config_hash
from ..policy.train import epoch_batches, iterations_per_epoch
from .core import ConsistencySchedule, DistillConfig, NetworkTriplet, ema_update, mcd_loss, self_consistency

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "mcd_loss", "lr", "eval_success_rate", "self_consistency_metric")


def params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


@dataclass
class Probe:
    """Held-out normalized (points, poses, chunks) used for the self-consistency metric."""

    points: np.ndarray
    poses: np.ndarray
    chunks: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, normalizer, size: int, seed: int) -> "Probe":
        pts, poses, acts = ds.raw_samples()
        idx = nk.stream(seed, "probe-rows").permutation(acts.shape[0])[:size]
        return cls(normalizer.normalize("points", pts[idx]), normalizer.normalize("poses", poses[idx]),
                   normalizer.normalize("actions", acts[idx]))


def held_out_probe(ds: Dataset, size: int, seed: int, n_demos: int = 50) -> Probe:
    """Probe built from fresh expert demos whose start seed differs from the training data."""
    fresh = generate_dataset(ds.task, n_demos, seed=ds.seed + 7919, n_points=ds.n_points,
                             horizon=ds.horizon, n_obs_steps=ds.n_obs_steps)
    return Probe.from_dataset(fresh, ds.normalizer, size, seed)


@dataclass
class DistillResult:
    checkpoint: Checkpoint
    log: list[dict]
    evals: list[dict] = field(default_factory=list)  # includes epoch 0 (before training)

    @property
    def top5_success(self) -> float:
        rates = sorted((e["success_rate"] for e in self.evals if e["epoch"] > 0), reverse=True)[:5]
        return float(np.mean(rates)) if rates else float("nan")


def _student_checkpoint(net, teacher: Checkpoint, csched: ConsistencySchedule, config: DistillConfig,
                        epochs_done: int) -> Checkpoint:
    provenance = {"seed": config.seed, "epochs": epochs_done, "config_hash": config_hash(asdict(config)),
                  "role": "student", "teacher_config_hash": teacher.provenance.get("config_hash")}
    return Checkpoint.from_network(net, teacher.noise, teacher.normalizer, teacher.task,
                                   consistency=csched.to_dict(), provenance=provenance)


def distill(teacher: Checkpoint, ds: Dataset, config: DistillConfig, *, init: Checkpoint | None = None,
            probe: Probe | None = None, evaluate: bool = True) -> DistillResult:
    """Distill ``teacher`` into a consistency student on the demonstrations in ``ds``.

    The student starts from the teacher's weights (or ``init``). Each epoch is one
    shuffled pass over the samples. Evaluation (success rate over
    ``config.eval_episodes`` episodes and the self-consistency metric on
    ``probe``) runs before training, every ``eval_every`` epochs and at the end.
    The returned checkpoint holds the online parameters.
    """
    if teacher.is_student:
        raise ValueError("distill expects a teacher checkpoint")
    config.validate(teacher.noise.T)
    start = init if init is not None else teacher
    if start.arch != teacher.arch:
        raise ValueError("student and teacher architecture metadata differ")

    csched = ConsistencySchedule(teacher.noise, config.sigma_d, config.boundary_scale)
    teacher_net = teacher.network()
    triplet = NetworkTriplet(teacher_net, start.network(), start.network())
    if config.epochs == 0:
        return DistillResult(_student_checkpoint(triplet.online, teacher, csched, config, 0), [], [])

    from ..policy.agents import ConsistencyPolicy

    if probe is None:
        probe = held_out_probe(ds, config.probe_size, config.seed)
    teacher_digest = params_digest(teacher_net.params)

    def run_eval(epoch: int) -> dict:
        ckpt = _student_checkpoint(triplet.online, teacher, csched, config, epoch)
        c = self_consistency(triplet.online, teacher_net, probe.chunks, probe.points, probe.poses, csched,
                             nk.stream(config.seed, "probe-pairs"), config.k)
        row = {"epoch": epoch, "self_consistency": c, "success_rate": float("nan")}
        if evaluate:
            policy = ConsistencyPolicy(ckpt, 1)
            res = evaluate_policy(policy, ds.task, config.eval_episodes, seed=config.seed + 1000 * epoch,
                                  **policy.observation_spec)
            row["success_rate"] = res.success_rate
        log.info("distill epoch %d: success %.3f, C %.5f", epoch, row["success_rate"], c)
        return row

    pts, poses, acts = ds.samples()
    n = acts.shape[0]
    iters = iterations_per_epoch(n, config.batch_size)
    total = config.epochs * iters
    lrs = nk.LrSchedule(config.lr, min(config.warmup, total), total)
    opt = nk.AdamWState(lr=config.lr, weight_decay=config.weight_decay)
    shuffle = nk.stream(config.seed, "distill-shuffle")
    loss_rng = nk.stream(config.seed, "distill-loss")

    evals = [run_eval(0)]
    rows = []
    it = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in epoch_batches(shuffle, n, config.batch_size):
            out = mcd_loss(triplet, acts[idx], pts[idx], poses[idx], loss_rng, csched, config)
            opt.lr = lrs.lr_at(it)
            triplet.online.set_params(nk.adamw_step(opt, triplet.online.params, out.grads))
            ema_update(triplet, config.mu)
            losses.append(out.loss)
            it += 1
        row = {"epoch": epoch, "mcd_loss": float(np.mean(losses)), "lr": opt.lr,
               "eval_success_rate": None, "self_consistency_metric": None}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            ev = run_eval(epoch)
            evals.append(ev)
            row["eval_success_rate"] = ev["success_rate"] if evaluate else None
            row["self_consistency_metric"] = ev["self_consistency"]
        rows.append(row)

    if params_digest(teacher_net.params) != teacher_digest:
        raise RuntimeError("teacher parameters changed during distillation")
    ckpt = _student_checkpoint(triplet.online, teacher, csched, config, config.epochs)
    return DistillResult(ckpt, rows, evals)
