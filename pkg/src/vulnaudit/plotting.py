"""Figures for benchmark summaries: cost/quality Pareto, sensitivity and ablation plots."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# keep PNG bytes independent of the installed matplotlib version
_SAVE_META = {"Software": None}


def _num(value) -> float | None:
    if value is None or value == "":
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def pareto_front(points: Sequence[dict[str, Any]]) -> list[bool]:
    """Flags for points that no other point beats on both cost and F1.

    A point is dominated when another has avg_tokens <= and f1 >= with at least
    one strict. Points missing either value are never on the front.
    """
    vals = [(_num(p.get("avg_tokens")), _num(p.get("f1"))) for p in points]
    flags = []
    for i, (t, f) in enumerate(vals):
        if t is None or f is None:
            flags.append(False)
            continue
        dominated = any(
            j != i and t2 is not None and f2 is not None and t2 <= t and f2 >= f and (t2 < t or f2 > f)
            for j, (t2, f2) in enumerate(vals)
        )
        flags.append(not dominated)
    return flags


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_SAVE_META)
    plt.close(fig)
    return path


def plot_pareto(points: Sequence[dict[str, Any]], path: str | Path) -> Path:
    """Scatter of avg_tokens against F1, one labelled point per run, front joined by a line."""
    flags = pareto_front(points)
    fig, ax = plt.subplots(figsize=(6, 4))
    front = []
    for p, on_front in zip(points, flags):
        t, f = _num(p.get("avg_tokens")), _num(p.get("f1"))
        if t is None or f is None:
            continue
        ax.scatter([t], [f], marker="o" if on_front else "x", color="tab:blue" if on_front else "tab:gray")
        ax.annotate(str(p.get("label") or p.get("preset") or ""), (t, f), textcoords="offset points", xytext=(4, 4), fontsize=8)
        if on_front:
            front.append((t, f))
    if len(front) > 1:
        front.sort()
        ax.plot([t for t, _ in front], [f for _, f in front], color="tab:blue", linewidth=1)
    ax.set_xlabel("average tokens per case")
    ax.set_ylabel("F1")
    ax.set_title("cost vs detection quality")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_sensitivity(rows: Sequence[dict[str, Any]], param: str, path: str | Path) -> Path:
    """F1 and avg_tokens over a sweep; threshold sweeps are labelled by (tau_high, tau_low)."""
    valid = [r for r in rows if str(r.get("valid", "true")).lower() in ("true", "1")]
    if param in ("k", "context_budget"):
        labels = [str(r.get("value")) for r in valid]
    else:
        labels = [f"{_num(r.get('tau_high')):.2f}/{_num(r.get('tau_low')):.2f}" for r in valid]
    xs = list(range(len(valid)))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(xs, [_num(r.get("f1")) or 0.0 for r in valid], marker="o")
    ax1.set_ylabel("F1")
    ax2.plot(xs, [_num(r.get("avg_tokens")) or 0.0 for r in valid], marker="o", color="tab:orange")
    ax2.set_ylabel("average tokens per case")
    for ax in (ax1, ax2):
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=30 if param not in ("k", "context_budget") else 0)
        ax.set_xlabel(param if param in ("k", "context_budget") else "tau_high/tau_low")
        ax.grid(True, alpha=0.3)
    fig.suptitle(f"sensitivity to {param}")
    return _save(fig, path)


def plot_ablation(rows: Sequence[dict[str, Any]], path: str | Path) -> Path:
    """Grouped bars of precision, recall and F1 per ablation variant."""
    names = [str(r["variant"]) for r in rows]
    xs = list(range(len(rows)))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6, len(rows) * 1.1), 4))
    for shift, metric in zip((-width, 0.0, width), ("precision", "recall", "f1")):
        ax.bar([x + shift for x in xs], [_num(r.get(metric)) or 0.0 for r in rows], width, label=metric)
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("component ablations")
    return _save(fig, path)
