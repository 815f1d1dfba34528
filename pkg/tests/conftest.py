"""Session artifacts for the acceptance suite.

Trained teachers, students and evaluation records are built once per session.
Set ``CDPOLICY_ACCEPTANCE_CACHE`` to a directory to keep them across sessions;
entries are keyed by a hash of the settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, replace
from functools import cache
from pathlib import Path

import pytest

from cdpolicy.consistency import DistillConfig, distill
from cdpolicy.experiments import success_over_seeds
from cdpolicy.manipenv import TASKS, generate_dataset
from cdpolicy.policy import (
    ConsistencyPolicy,
    DiffusionPolicy,
    TeacherConfig,
    load_checkpoint,
    save_checkpoint,
    teacher_train,
)

CACHE_ENV = "CDPOLICY_ACCEPTANCE_CACHE"

N_DEMOS = 50
EPISODES = 100
SEEDS = (0, 1, 2)
TEACHER_STEPS = 10
TEACHER = TeacherConfig(epochs=400, lr=1e-3, warmup=100)
TEACHER_EPOCHS = {"reach-goal": 300}
DISTILL = DistillConfig(epochs=100, lr=1e-4, warmup=50, eval_every=10, eval_episodes=20)

RESULTS: list[str] = []


def _key(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


class Runs:
    """Lazily built, disk-cached acceptance artifacts."""

    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)

    def _checkpoint(self, name: str, build):
        path = self.root / f"{name}.ckpt"
        if path.exists():
            return load_checkpoint(path)
        ckpt = build()
        save_checkpoint(ckpt, path)
        return ckpt

    def _record(self, name: str, build):
        path = self.root / f"{name}.json"
        if path.exists():
            return json.loads(path.read_text())
        rec = build()
        path.write_text(json.dumps(rec, indent=1, default=float))
        return rec

    @cache
    def dataset(self, task: str):
        return generate_dataset(task, N_DEMOS, 0)

    def teacher_config(self, task: str, **kw) -> TeacherConfig:
        return replace(TEACHER, epochs=TEACHER_EPOCHS.get(task, TEACHER.epochs), **kw)

    @cache
    def teacher(self, task: str, prediction_type: str = "sample", T: int = 100):
        cfg = self.teacher_config(task, prediction_type=prediction_type, T=T)
        name = f"teacher-{task}-{prediction_type}-T{T}-{_key(N_DEMOS, asdict(cfg))}"
        return self._checkpoint(name, lambda: teacher_train(self.dataset(task), cfg)[0])

    @cache
    def student(self, task: str, prediction_type: str = "sample", T: int = 100):
        """(student checkpoint, evaluation rows from epoch 0 to the end of distillation)."""
        teacher = self.teacher(task, prediction_type, T)
        cfg = replace(DISTILL, k=max(1, round(0.1 * T)))
        name = f"student-{task}-{prediction_type}-T{T}-{_key(N_DEMOS, asdict(cfg), teacher.provenance)}"
        result = {}

        def run():
            result["res"] = distill(teacher, self.dataset(task), cfg)
            return result["res"].checkpoint

        ckpt = self._checkpoint(name, run)
        evals = self._record(name, lambda: result["res"].evals)
        return ckpt, evals

    @cache
    def success(self, role: str, task: str, n_steps: int, prediction_type: str = "sample", T: int = 100) -> dict:
        """Success over ``EPISODES`` episodes for each of ``SEEDS``."""
        if role == "teacher":
            ckpt = self.teacher(task, prediction_type, T)

            def make():
                return DiffusionPolicy(ckpt, n_steps)
        else:
            ckpt = self.student(task, prediction_type, T)[0]

            def make():
                return ConsistencyPolicy(ckpt, n_steps)
        name = f"success-{role}-{task}-{prediction_type}-T{T}-n{n_steps}-{_key(EPISODES, SEEDS, ckpt.provenance)}"

        def run():
            mean, std, rates = success_over_seeds(make, task, EPISODES, SEEDS)
            return {"mean": mean, "std": std, "rates": rates}

        return self._record(name, run)


@pytest.fixture(scope="session")
def runs(tmp_path_factory) -> Runs:
    root = os.environ.get(CACHE_ENV)
    return Runs(Path(root) if root else tmp_path_factory.mktemp("acceptance"))


@pytest.fixture(scope="session")
def tasks() -> tuple[str, ...]:
    return tuple(TASKS)


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
