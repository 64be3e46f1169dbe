"""Matplotlib figures for the report command. Files only, no display."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import REPORT_LABELS, AggregateReport  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    # fixed metadata so reruns produce the same file
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_error_bars(agg: Mapping[str, AggregateReport], path,
                    metric: str = "mean_error_power") -> Path:
    names = list(agg)
    means = np.array([getattr(agg[n].mean, metric) for n in names])
    stds = np.array([getattr(agg[n].std, metric) for n in names])
    fig, ax = plt.subplots(figsize=(1.3 * len(names) + 2, 3.6))
    ax.bar(range(len(names)), means, yerr=stds, capsize=4, color="#4c72b0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=25, ha="right")
    ax.set_ylabel(f"{REPORT_LABELS[metric]} [%]")
    n = max(a.n_runs for a in agg.values())
    ax.set_title(f"{REPORT_LABELS[metric]} (mean ± std over {n} runs)")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_day_profile(date: str, curves: Mapping[str, np.ndarray], actual: np.ndarray,
                     path, site_id: str = "") -> Path:
    hours = np.arange(96) / 4.0
    fig, ax = plt.subplots(figsize=(7, 3.6))
    ax.plot(hours, actual, color="black", lw=2, label="actual")
    for name, c in curves.items():
        ax.plot(hours, c, lw=1.2, label=name)
    ax.axvspan(6, 21, color="#f0e68c", alpha=0.15, lw=0)
    ax.set_xlim(0, 24)
    ax.set_xlabel("hour of day")
    ax.set_ylabel("power [kW]")
    ax.set_title(f"{site_id} {date}".strip())
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_heldout(agg: Mapping[str, AggregateReport], path) -> Path:
    """Training-population vs Predict vs Evolve error for each tier."""
    tiers = ["global", "location", "orientation"]
    phases = [("predict", "Predict"), ("evolve", "Evolve")]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    width = 0.35
    x = np.arange(len(tiers))
    for i, (key, label) in enumerate(phases):
        vals = [agg[f"{key}_{t}"].mean.mean_error_power if f"{key}_{t}" in agg else np.nan
                for t in tiers]
        ax.bar(x + (i - 0.5) * width, vals, width, label=label)
    if "training_location" in agg:
        ax.axhline(agg["training_location"].mean.mean_error_power, color="black", ls="--",
                   lw=1, label="training sites, location")
    ax.set_xticks(x)
    ax.set_xticklabels(tiers)
    ax.set_ylabel("Mean Error Power [%]")
    ax.set_title("held-out sites")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)
