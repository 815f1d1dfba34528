"""Figures rendered to files. Output is byte-stable for identical inputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {"svg.hashsalt": "cdpolicy", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_tradeoff(rows: list[dict], path) -> Path:
    """Per-call latency against success rate, one labelled point per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for r in rows:
            ax.errorbar(r["latency_ms_mean"], r["success_mean"], xerr=r["latency_ms_std"], yerr=r["success_std"],
                        fmt="o", capsize=2)
            ax.annotate(f"{r['method']} (NFE {r['nfe']})", (r["latency_ms_mean"], r["success_mean"]),
                        textcoords="offset points", xytext=(4, 4))
        ax.set_xlabel("latency per call (ms)")
        ax.set_ylabel("success rate")
        ax.set_ylim(-0.05, 1.1)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)


def plot_learning_curves(curves: dict[str, list[dict]], path, key: str = "success_rate") -> Path:
    """Evaluation metric against distillation epoch, one line per run."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for label in sorted(curves):
            pts = [(r["epoch"], r[key]) for r in curves[label] if r.get(key) is not None]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        ax.set_xlabel("distillation epoch")
        ax.set_ylabel(key.replace("_", " "))
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)
