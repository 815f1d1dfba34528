"""Command-line entry point.

Every command takes ``--config FILE`` (JSON with the fields of
``ExperimentConfig``; nested ``teacher`` and ``distill`` objects) and flags
that override it. Outputs land in ``--out`` or, by default, under
``$CDPOLICY_OUT`` (``runs`` when unset); each output directory receives a copy
of the resolved config.

Exit codes: 0 success, 2 config error, 3 missing or unreadable artifact, 4 acceptance
check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments as ex
from .consistency import LOG_COLUMNS, distill
from .experiments import ConfigError, ExperimentConfig
from .manipenv import TASKS, generate_dataset, load_dataset, save_dataset
from .plotting import plot_learning_curves, plot_tradeoff
from .policy import CheckpointError, load_checkpoint, make_policy, save_checkpoint, teacher_train

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("cdpolicy")


class MissingArtifact(Exception):
    pass


class CheckFailed(Exception):
    pass


def out_root() -> Path:
    return Path(os.environ.get("CDPOLICY_OUT", "runs"))


def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from e


# (flag, config path, type, help)
TEACHER_FLAGS = [
    ("--prediction-type", "teacher.prediction_type", str, "sample or epsilon"),
    ("--T", "teacher.T", int, "training diffusion steps"),
    ("--epochs", "teacher.epochs", int, None),
    ("--batch-size", "teacher.batch_size", int, None),
    ("--lr", "teacher.lr", float, None),
    ("--warmup", "teacher.warmup", int, "linear warmup iterations"),
    ("--weight-decay", "teacher.weight_decay", float, None),
    ("--activation", "teacher.activation", str, "mish, tanh or relu"),
    ("--seed", "teacher.seed", int, None),
]
DISTILL_FLAGS = [
    ("--k", "distill.k", int, "skipping interval of the teacher solver"),
    ("--mu", "distill.mu", float, "EMA rate of the target network"),
    ("--epochs", "distill.epochs", int, None),
    ("--batch-size", "distill.batch_size", int, None),
    ("--lr", "distill.lr", float, None),
    ("--warmup", "distill.warmup", int, None),
    ("--sigma-d", "distill.sigma_d", float, None),
    ("--boundary-scale", "distill.boundary_scale", float, None),
    ("--eval-every", "distill.eval_every", int, None),
    ("--eval-episodes", "distill.eval_episodes", int, None),
    ("--seed", "distill.seed", int, None),
]
EVAL_FLAGS = [
    ("--episodes", "episodes", int, "episodes per evaluation seed"),
    ("--seeds", "seeds", _int_list, "comma-separated evaluation seeds"),
]
LATENCY_FLAGS = [
    ("--latency-calls", "latency_calls", int, "timed single-observation calls"),
    ("--latency-warmup", "latency_warmup", int, None),
]
ABLATION_FLAGS = [
    ("--teacher-epochs", "teacher.epochs", int, None),
    ("--teacher-lr", "teacher.lr", float, None),
    ("--distill-epochs", "distill.epochs", int, None),
    ("--distill-lr", "distill.lr", float, None),
    ("--eval-every", "distill.eval_every", int, None),
    ("--eval-episodes", "distill.eval_episodes", int, None),
    ("--seed", "distill.seed", int, None),
]


def _add_flags(p: argparse.ArgumentParser, table) -> None:
    for flag, path, typ, help_ in table:
        p.add_argument(flag, dest="cfg:" + path, type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdpolicy", description=__doc__.split("\n")[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON config; flags override it")
        p.add_argument("--out", type=Path, help="output directory")
        return p

    p = command("gen-data", "generate expert demonstrations")
    p.add_argument("--task", dest="cfg:task", choices=TASKS)
    p.add_argument("--n", dest="cfg:n_demos", type=int, help="number of demonstrations")
    p.add_argument("--seed", dest="cfg:data_seed", type=int)

    p = command("train-teacher", "train a diffusion teacher")
    p.add_argument("--data", type=Path, required=True)
    _add_flags(p, TEACHER_FLAGS)

    p = command("distill", "distill a teacher into a consistency student")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--teacher", type=Path, required=True)
    _add_flags(p, DISTILL_FLAGS)

    p = command("eval", "evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--n-steps", type=int, help="sampling steps (default 10 teacher, 1 student)")
    _add_flags(p, EVAL_FLAGS + LATENCY_FLAGS)

    p = command("bench", "teacher/student results table, CSV and trade-off plot")
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--student", type=Path, required=True)
    p.add_argument("--min-speedup", type=float, help="exit 4 unless teacher-10 / student-1 latency reaches this")
    _add_flags(p, EVAL_FLAGS + LATENCY_FLAGS)

    p = command("ablate-prediction", "sample vs noise prediction learning curves")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--check", action="store_true", help="exit 4 unless sample prediction wins")
    _add_flags(p, ABLATION_FLAGS)

    p = command("ablate-teacher-steps", "distill teachers with 100 and 1000 diffusion steps")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--check", action="store_true", help="exit 4 unless each student is within 5 points")
    _add_flags(p, ABLATION_FLAGS + EVAL_FLAGS + LATENCY_FLAGS)
    return parser


def resolve_config(args) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        if not args.config.exists():
            raise MissingArtifact(f"config file not found: {args.config}")
        try:
            data = json.loads(args.config.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: {e}") from e
    for key, value in vars(args).items():
        if not key.startswith("cfg:") or value is None:
            continue
        *parents, leaf = key[4:].split(".")
        node = data
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    try:
        cfg = ExperimentConfig.from_dict(data)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.n_demos < 1 or cfg.episodes < 1 or not cfg.seeds:
        raise ConfigError("n_demos and episodes must be positive and seeds non-empty")
    return cfg


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


def _out(args, default: str) -> Path:
    out = args.out if args.out is not None else out_root() / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, cfg: ExperimentConfig, **extra) -> None:
    ex.save_json(out / "config.json", {**cfg.to_dict(), **{k: str(v) for k, v in extra.items()}})


def cmd_gen_data(args, cfg):
    ds = generate_dataset(cfg.task, cfg.n_demos, cfg.data_seed)
    out = args.out or out_root() / "data" / f"{cfg.task}-n{cfg.n_demos}-s{cfg.data_seed}"
    save_dataset(ds, out)
    print(f"wrote {ds.n_demos} demonstrations ({ds.actions.shape[0]} frames) to {out}")


def cmd_train_teacher(args, cfg):
    ds = load_dataset(_need(args.data))
    out = _out(args, f"teacher-{ds.task}")
    _write_config(out, cfg, data=args.data)
    ckpt, rows = teacher_train(ds, cfg.teacher)
    save_checkpoint(ckpt, out / "teacher.ckpt")
    ex.write_csv(out / "teacher_log.csv", ("epoch", "loss", "lr"), rows)
    print(f"teacher checkpoint: {out / 'teacher.ckpt'}")


def cmd_distill(args, cfg):
    ds = load_dataset(_need(args.data))
    teacher = load_checkpoint(_need(args.teacher))
    out = _out(args, f"student-{ds.task}")
    _write_config(out, cfg, data=args.data, teacher=args.teacher)
    res = distill(teacher, ds, cfg.distill)
    save_checkpoint(res.checkpoint, out / "student.ckpt")
    ex.write_csv(out / "distill_log.csv", LOG_COLUMNS, res.log)
    if res.evals:
        plot_learning_curves({"student": res.evals}, out / "learning_curve.svg")
    print(f"student checkpoint: {out / 'student.ckpt'} (top-5 eval success {res.top5_success:.3f})")


def cmd_eval(args, cfg):
    ckpt = load_checkpoint(_need(args.ckpt))
    role = "student" if ckpt.is_student else "teacher"
    n = args.n_steps or (1 if ckpt.is_student else cfg.teacher_steps)
    try:
        make_policy(ckpt, n)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    row = ex.evaluate_row(f"{role}-{n}", lambda: make_policy(ckpt, n), ckpt.task, cfg.episodes, cfg.seeds,
                          latency_calls=cfg.latency_calls, latency_warmup=cfg.latency_warmup)
    table = ex.ResultsTable([row])
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_config(args.out, cfg, ckpt=args.ckpt)
        table.write_csv(args.out / "eval.csv")
    print(table.format())


def cmd_bench(args, cfg):
    teacher = load_checkpoint(_need(args.teacher))
    student = load_checkpoint(_need(args.student), require_student=True)
    out = _out(args, f"bench-{teacher.task}")
    _write_config(out, cfg, teacher=args.teacher, student=args.student)
    table = ex.bench(teacher, student, episodes=cfg.episodes, seeds=cfg.seeds, latency_calls=cfg.latency_calls,
                     latency_warmup=cfg.latency_warmup)
    table.write_csv(out / "bench.csv")
    plot_tradeoff(table.rows, out / "tradeoff.svg")
    print(table.format())
    speedup = table.row("teacher-10")["latency_ms_mean"] / table.row("student-1")["latency_ms_mean"]
    print(f"speedup teacher-10 / student-1: {speedup:.2f}x")
    if args.min_speedup is not None and speedup < args.min_speedup:
        raise CheckFailed(f"speedup {speedup:.2f} below {args.min_speedup}")


def cmd_ablate_prediction(args, cfg):
    ds = load_dataset(_need(args.data))
    out = _out(args, f"ablate-prediction-{ds.task}")
    _write_config(out, cfg, data=args.data)
    res = ex.ablate_prediction(ds, cfg.teacher, cfg.distill)
    summary = {}
    for kind in ("sample", "epsilon"):
        ex.write_csv(out / f"distill_log_{kind}.csv", LOG_COLUMNS, res.logs[kind])
        ex.write_csv(out / f"eval_curve_{kind}.csv", ex.CURVE_COLUMNS, res.curves[kind])
        summary[kind] = {"epochs_to_0.5": res.epochs_to(kind), "final_success": res.final_success(kind)}
    plot_learning_curves(res.curves, out / "learning_curves.svg")
    ex.save_json(out / "summary.json", summary)
    print(json.dumps(summary, indent=2))
    if args.check:
        s, e = summary["sample"], summary["epsilon"]
        if not (s["epochs_to_0.5"] <= 0.5 * e["epochs_to_0.5"] and s["final_success"] >= e["final_success"]):
            raise CheckFailed("sample prediction did not converge faster than noise prediction")


def cmd_ablate_teacher_steps(args, cfg):
    ds = load_dataset(_need(args.data))
    out = _out(args, f"ablate-teacher-steps-{ds.task}")
    _write_config(out, cfg, data=args.data)
    rows, artifacts = ex.ablate_teacher_steps(ds, cfg.teacher, cfg.distill, episodes=cfg.episodes, seeds=cfg.seeds,
                                              latency_calls=cfg.latency_calls, latency_warmup=cfg.latency_warmup)
    for T, (teacher, student) in artifacts.items():
        save_checkpoint(teacher, out / f"teacher-T{T}.ckpt")
        save_checkpoint(student, out / f"student-T{T}.ckpt")
    ex.write_csv(out / "teacher_steps.csv", ex.TEACHER_STEPS_COLUMNS, rows)
    for r in rows:
        print(f"T={r['T']:>5} teacher {r['teacher_success']:.3f} ({r['teacher_steps']} steps, "
              f"{r['teacher_latency_ms']:.2f} ms)  student {r['student_success']:.3f} ({r['student_latency_ms']:.2f} ms)")
    if args.check:
        lat = [r["student_latency_ms"] for r in rows]
        close = all(abs(r["student_success"] - r["teacher_success"]) <= 0.05 for r in rows)
        if not close or max(lat) / min(lat) - 1.0 >= 0.2:
            raise CheckFailed("student/teacher gap or latency spread outside tolerance")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate-prediction": cmd_ablate_prediction,
    "ablate-teacher-steps": cmd_ablate_teacher_steps,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (MissingArtifact, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
