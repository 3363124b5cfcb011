"""Figure rendering for benchmark reports.

Renders the objective-versus-round convergence curves recorded in bench
traces to PNG files next to the CSV/JSON output.  One figure per instance;
solid line is the mean over seeds, the band is +/- one standard deviation.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_SIZE = (6.4, 4.0)
DPI = 130


def _curves(per_seed_traces: list[list[dict]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align per-seed traces on round index; returns (rounds, mean, std)."""
    n_rounds = min(len(t) for t in per_seed_traces)
    data = np.array([[row["objective"] for row in t[:n_rounds]] for t in per_seed_traces])
    rounds = np.array([row["round"] for row in per_seed_traces[0][:n_rounds]])
    return rounds, data.mean(axis=0), data.std(axis=0)


def render_convergence(instance_name: str,
                       method_traces: dict[str, list[list[dict]]],
                       out_path) -> None:
    """Plot mean +/- std objective curves for each method on one instance."""
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    for method, traces in sorted(method_traces.items()):
        if not traces:
            continue
        rounds, mean, std = _curves(traces)
        (line,) = ax.plot(rounds, mean, marker="o", markersize=3, label=method)
        ax.fill_between(rounds, mean - std, mean + std,
                        color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("round")
    ax.set_ylabel("incumbent objective")
    ax.set_title(instance_name)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)


def render_summary(summary_rows: list[dict], out_path) -> None:
    """Bar chart of mean final objectives per (instance, method)."""
    instances = sorted({r["instance"] for r in summary_rows})
    methods = sorted({r["method"] for r in summary_rows})
    lookup = {(r["instance"], r["method"]): r for r in summary_rows}
    x = np.arange(len(instances))
    width = 0.8 / max(1, len(methods))
    fig, ax = plt.subplots(figsize=(max(6.4, 1.2 * len(instances)), 4.0))
    for k, method in enumerate(methods):
        means = [lookup.get((i, method), {}).get("objective_mean", np.nan) for i in instances]
        stds = [lookup.get((i, method), {}).get("objective_std", 0.0) for i in instances]
        ax.bar(x + k * width, means, width, yerr=stds, capsize=2, label=method)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(instances, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("final objective (mean over seeds)")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
