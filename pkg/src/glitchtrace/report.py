"""Figure rendering for detection results, per-epoch curves, and ratio sweeps.

All plotting consumes the same row dictionaries the CSV writers emit, so a
figure can always be regenerated from the delimited output alone (see the
``report`` CLI subcommand). Files are written headless via the Agg backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .signals import CUMULATIVE_SCOPE, SIGNALS, parse_scope

_SIGNAL_LABELS = {
    "self_influence": "Self-Influence",
    "marginal_influence": "Marginal Influence",
    "average_absolute_influence": "Avg Absolute Influence",
    "gd_class": "GD-class",
}


def _style(ax):
    ax.grid(True, linestyle=":", linewidth=0.6, alpha=0.7)
    ax.set_axisbelow(True)
    ax.set_ylim(-0.02, 1.05)


def plot_f1_bars(rows: Iterable[dict], path: str | Path, title: str = "") -> Path:
    """Bar chart of cumulative-scope F1 per signal."""
    rows = [r for r in rows if r.get("epoch_scope") == CUMULATIVE_SCOPE]
    by_signal: dict[str, list[float]] = {}
    for row in rows:
        by_signal.setdefault(row["signal"], []).append(float(row["f1"]))
    names = [s for s in SIGNALS if s in by_signal] + sorted(set(by_signal) - set(SIGNALS))
    means = [sum(by_signal[s]) / len(by_signal[s]) for s in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(names)), means, color="tab:blue", width=0.6)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels([_SIGNAL_LABELS.get(s, s) for s in names], rotation=20, ha="right")
    ax.set_ylabel("F1 (known glitch ratio)")
    if title:
        ax.set_title(title)
    _style(ax)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_per_epoch_f1(rows: Iterable[dict], path: str | Path, title: str = "") -> Path:
    """F1 over epochs, one line per signal; cumulative scores as flat dashes."""
    per_epoch: dict[str, list[tuple[int, float]]] = {}
    cumulative: dict[str, float] = {}
    for row in rows:
        epoch = parse_scope(row["epoch_scope"])
        if epoch is None:
            cumulative[row["signal"]] = float(row["f1"])
        else:
            per_epoch.setdefault(row["signal"], []).append((epoch, float(row["f1"])))
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for signal, points in sorted(per_epoch.items()):
        points.sort()
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        (line,) = ax.plot(xs, ys, marker="o", markersize=3.5, label=_SIGNAL_LABELS.get(signal, signal))
        if signal in cumulative:
            ax.axhline(cumulative[signal], color=line.get_color(), linestyle="--", linewidth=0.8, alpha=0.6)
    ax.set_xlabel("epoch")
    ax.set_ylabel("F1 (known glitch ratio)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    _style(ax)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_ratio_sweep(summary_rows: Iterable[dict], out_dir: str | Path, stem: str = "sweep") -> list[Path]:
    """One figure per glitch type: mean F1 vs glitch ratio, one line per signal."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_type: dict[str, dict[str, list[tuple[float, float]]]] = {}
    for row in summary_rows:
        if row.get("epoch_scope", CUMULATIVE_SCOPE) != CUMULATIVE_SCOPE:
            continue
        by_type.setdefault(row["glitch_type"], {}).setdefault(row["signal"], []).append(
            (float(row["ratio"]), float(row["mean_f1"]))
        )
    paths = []
    for glitch_type, by_signal in sorted(by_type.items()):
        fig, ax = plt.subplots(figsize=(6.5, 4))
        for signal in [s for s in SIGNALS if s in by_signal] + sorted(set(by_signal) - set(SIGNALS)):
            points = sorted(by_signal[signal])
            ax.plot(
                [p[0] for p in points],
                [p[1] for p in points],
                marker="o",
                markersize=3.5,
                label=_SIGNAL_LABELS.get(signal, signal),
            )
        ax.set_xlabel("glitch ratio")
        ax.set_ylabel("mean F1 over seeds")
        ax.set_title(f"detection vs ratio: {glitch_type}")
        ax.legend(fontsize=8)
        _style(ax)
        fig.tight_layout()
        path = out_dir / f"{stem}_{glitch_type}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths
