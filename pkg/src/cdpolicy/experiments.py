"""Experiment harness: results tables, latency benchmark and the two ablations."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .consistency import DistillConfig, distill
from .manipenv import ObsBatch, evaluate_policy, observe_points, reset
from .manipenv.dataset import Dataset
from .numkit import stream
from .policy import Checkpoint, ConsistencyPolicy, DiffusionPolicy, TeacherConfig, teacher_train

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("method", "nfe", "success_mean", "success_std", "latency_ms_mean", "latency_ms_std")
CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {', '.join(unknown)}")
    return cls(**d)


@dataclass
class ExperimentConfig:
    task: str = "reach-goal"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    n_demos: int = 50
    data_seed: int = 0
    episodes: int = 100
    teacher_steps: int = 10
    latency_calls: int = 500
    latency_warmup: int = 50
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        teacher = _from_dict(TeacherConfig, d.pop("teacher", {}))
        dist = _from_dict(DistillConfig, d.pop("distill", {}))
        cfg = _from_dict(cls, d)
        cfg.teacher, cfg.distill = teacher, dist
        return cfg


# ---------------------------------------------------------------- results


@dataclass
class ResultsTable:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append({k: row[k] for k in TABLE_COLUMNS})

    def row(self, method: str) -> dict:
        return next(r for r in self.rows if r["method"] == method)

    def write_csv(self, path) -> Path:
        return write_csv(path, TABLE_COLUMNS, self.rows)

    def format(self) -> str:
        lines = [f"{'method':<12} {'NFE':>4} {'success':>15} {'latency ms':>17}"]
        for r in self.rows:
            lines.append(
                f"{r['method']:<12} {r['nfe']:>4} {r['success_mean']:>7.3f} ± {r['success_std']:<5.3f} "
                f"{r['latency_ms_mean']:>8.3f} ± {r['latency_ms_std']:<6.3f}"
            )
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    return [{k: _parse(v) for k, v in r.items()} for r in rows]


def _parse(v: str):
    if v == "":
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


# ---------------------------------------------------------------- evaluation


def probe_observation(task: str, seed: int = 0, n_points: int = 64, n_obs_steps: int = 2) -> ObsBatch:
    """A single start-of-episode observation (batch of one)."""
    s = reset(task, stream(seed, "latency-probe"))
    pts = np.repeat(observe_points([s], n_points)[:, None], n_obs_steps, axis=1)
    poses = np.repeat(s.pose()[None, None], n_obs_steps, axis=1)
    return ObsBatch(pts, poses, [s])


def benchmark_latency(policy, obs: ObsBatch, *, calls: int = 500, warmup: int = 50, seed: int = 0):
    """Wall-clock per-call latency (ms) on one observation; returns (mean, std, nfe per call)."""
    rng = [stream(seed, "latency")]
    for _ in range(warmup):
        policy(obs, rng)
    times = np.empty(calls)
    before = policy.nfe
    for i in range(calls):
        tic = time.perf_counter()
        policy(obs, rng)
        times[i] = time.perf_counter() - tic
    nfe = (policy.nfe - before) / calls
    return float(times.mean() * 1e3), float(times.std() * 1e3), nfe


def success_over_seeds(make_policy, task: str, episodes: int, seeds) -> tuple[float, float, list[float]]:
    rates = []
    for seed in seeds:
        policy = make_policy()
        rates.append(evaluate_policy(policy, task, episodes, seed, **policy.observation_spec).success_rate)
    return float(np.mean(rates)), float(np.std(rates)), rates


def evaluate_row(method: str, make_policy, task: str, episodes: int, seeds, *, latency_calls: int = 500,
                 latency_warmup: int = 50) -> dict:
    mean, std, _ = success_over_seeds(make_policy, task, episodes, seeds)
    policy = make_policy()
    lat_mean, lat_std, nfe = benchmark_latency(policy, probe_observation(task, **policy.observation_spec),
                                               calls=latency_calls, warmup=latency_warmup)
    return {"method": method, "nfe": int(round(nfe)), "success_mean": mean, "success_std": std,
            "latency_ms_mean": lat_mean, "latency_ms_std": lat_std}


BENCH_METHODS = (("teacher-10", "teacher", 10), ("teacher-4", "teacher", 4),
                 ("student-1", "student", 1), ("student-4", "student", 4))


def bench(teacher: Checkpoint, student: Checkpoint, *, episodes: int = 100, seeds=(0, 1, 2),
          latency_calls: int = 500, latency_warmup: int = 50) -> ResultsTable:
    """Rows for the 10- and 4-step teacher and the 1- and 4-step student."""
    table = ResultsTable()
    for method, role, n in BENCH_METHODS:
        if role == "teacher":
            def make(n=n):
                return DiffusionPolicy(teacher, n)
        else:
            def make(n=n):
                return ConsistencyPolicy(student, n)
        table.add(**evaluate_row(method, make, teacher.task, episodes, seeds, latency_calls=latency_calls,
                                 latency_warmup=latency_warmup))
        log.info("bench %s done", method)
    return table


# ---------------------------------------------------------------- ablations


def epochs_to_reach(evals: list[dict], threshold: float) -> float:
    """First evaluated epoch whose success reaches ``threshold``; inf if none does."""
    for e in evals:
        if e["success_rate"] >= threshold:
            return float(e["epoch"])
    return math.inf


@dataclass
class PredictionAblation:
    curves: dict[str, list[dict]]  # prediction type -> evaluation rows (epoch, success_rate, self_consistency)
    logs: dict[str, list[dict]]
    teachers: dict[str, Checkpoint]
    students: dict[str, Checkpoint]

    def epochs_to(self, kind: str, threshold: float = 0.5) -> float:
        return epochs_to_reach(self.curves[kind], threshold)

    def final_success(self, kind: str) -> float:
        return self.curves[kind][-1]["success_rate"]


def ablate_prediction(ds: Dataset, teacher_cfg: TeacherConfig, distill_cfg: DistillConfig,
                      teachers: dict[str, Checkpoint] | None = None) -> PredictionAblation:
    """Distill a sample-prediction and a noise-prediction teacher under identical budgets.

    Both runs share the data, shuffles and noise streams; only the head semantics differ.
    """
    teachers = dict(teachers or {})
    curves, logs, students = {}, {}, {}
    for kind in ("sample", "epsilon"):
        if kind not in teachers:
            teachers[kind], _ = teacher_train(ds, replace(teacher_cfg, prediction_type=kind))
        res = distill(teachers[kind], ds, distill_cfg)
        curves[kind], logs[kind], students[kind] = res.evals, res.log, res.checkpoint
    return PredictionAblation(curves, logs, teachers, students)


TEACHER_STEP_SETTINGS = ((100, 10), (1000, 50))


def ablate_teacher_steps(ds: Dataset, teacher_cfg: TeacherConfig, distill_cfg: DistillConfig, *,
                         settings=TEACHER_STEP_SETTINGS, episodes: int = 100, seeds=(0, 1, 2),
                         latency_calls: int = 500, latency_warmup: int = 50,
                         teachers: dict[int, Checkpoint] | None = None, k_fraction: float | None = 0.1):
    """Per (T, teacher DDIM steps) setting: train, distill, and compare student with teacher.

    With ``k_fraction`` set, the skipping interval is ``round(k_fraction * T)`` so
    every setting skips the same share of the trajectory.
    """
    teachers = dict(teachers or {})
    rows, artifacts = [], {}
    for T, n_steps in settings:
        if T not in teachers:
            teachers[T], _ = teacher_train(ds, replace(teacher_cfg, T=T))
        k = max(1, round(k_fraction * T)) if k_fraction else distill_cfg.k
        student = distill(teachers[T], ds, replace(distill_cfg, k=k), evaluate=False).checkpoint
        t_row = evaluate_row(f"teacher-{T}-{n_steps}", lambda: DiffusionPolicy(teachers[T], n_steps), ds.task,
                             episodes, seeds, latency_calls=latency_calls, latency_warmup=latency_warmup)
        s_row = evaluate_row(f"student-{T}-1", lambda: ConsistencyPolicy(student, 1), ds.task, episodes, seeds,
                             latency_calls=latency_calls, latency_warmup=latency_warmup)
        rows.append({"T": T, "teacher_steps": n_steps, "k": k,
                     "teacher_success": t_row["success_mean"], "teacher_success_std": t_row["success_std"],
                     "teacher_latency_ms": t_row["latency_ms_mean"], "teacher_nfe": t_row["nfe"],
                     "student_success": s_row["success_mean"], "student_success_std": s_row["success_std"],
                     "student_latency_ms": s_row["latency_ms_mean"], "student_nfe": s_row["nfe"]})
        artifacts[T] = (teachers[T], student)
    return rows, artifacts


TEACHER_STEPS_COLUMNS = ("T", "teacher_steps", "k", "teacher_success", "teacher_success_std", "teacher_latency_ms",
                         "teacher_nfe", "student_success", "student_success_std", "student_latency_ms", "student_nfe")
CURVE_COLUMNS = ("epoch", "success_rate", "self_consistency")


def save_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
    return path
