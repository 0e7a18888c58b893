"""Rendering of per-condition summary figures next to the CSV reports.

Each figure is a two-panel bar chart over the 36 grid conditions (or the
subset that was run): cluster counts on top, similarity to the clean
reference clustering below. Files are written as PNG with the Agg
backend, so no display is required.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_BAR_KW = dict(width=0.72, edgecolor="black", linewidth=0.4)


def _condition_ticks(ax, reports) -> None:
    labels = [f"{r.condition.magnitude.value[0]}:{r.condition.rate:g}" for r in reports]
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_xlabel("condition (magnitude : error rate), grouped by type / variables")


def _block_separators(ax, reports) -> None:
    """Vertical separators and titles for (error type, variables) blocks."""
    starts, names = [], []
    prev = None
    for i, r in enumerate(reports):
        key = (r.condition.error_type.value, r.condition.variables.value)
        if key != prev:
            starts.append(i)
            names.append(f"{key[0]}/{key[1]}")
            prev = key
    for s in starts[1:]:
        ax.axvline(s - 0.5, color="grey", linewidth=0.8, linestyle="--")
    top = ax.get_ylim()[1]
    for s, name, end in zip(starts, names, starts[1:] + [len(reports)]):
        ax.text((s + end - 1) / 2.0, top * 0.97, name, ha="center", va="top", fontsize=8)


def _two_panel(reports, top_vals, top_label, bottom_vals, bottom_label, title, path: Path) -> None:
    idx = np.arange(len(reports))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(11, 6), sharex=True)
    ax1.bar(idx, top_vals, color="#4878d0", **_BAR_KW)
    ax1.set_ylabel(top_label)
    ax1.set_title(title)
    _block_separators(ax1, reports)
    ax2.bar(idx, bottom_vals, color="#ee854a", **_BAR_KW)
    ax2.set_ylabel(bottom_label)
    ax2.set_ylim(0.0, 1.05)
    _condition_ticks(ax2, reports)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _nan_if_none(values) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def write_figures(reports, out_dir: str | Path) -> list[Path]:
    """Render the summary figures for the ran conditions; returns the
    written paths. Figures for an algorithm are skipped when it was not
    part of the run."""
    out = Path(out_dir)
    written: list[Path] = []
    if not reports:
        return written

    if reports[0].gmm_n_clusters is not None:
        path = out / "gmm_components.png"
        _two_panel(
            reports,
            _nan_if_none(r.gmm_n_clusters for r in reports),
            "mean no. of components",
            _nan_if_none(r.gmm_ari for r in reports),
            "mean adjusted Rand index",
            "GMM mixture components vs clean reference",
            path,
        )
        written.append(path)
        path = out / "gmm_merged.png"
        _two_panel(
            reports,
            _nan_if_none(r.gmm_n_merged for r in reports),
            "mean no. of merged clusters",
            _nan_if_none(r.gmm_ari_merged for r in reports),
            "mean adjusted Rand index",
            "GMM merged clusters vs clean reference",
            path,
        )
        written.append(path)

    if reports[0].dbscan_n_clusters is not None:
        path = out / "dbscan_clusters.png"
        _two_panel(
            reports,
            _nan_if_none(r.dbscan_n_clusters for r in reports),
            "mean no. of clusters",
            _nan_if_none(r.dbscan_ari for r in reports),
            "mean adjusted Rand index",
            "DBSCAN clusters vs clean reference",
            path,
        )
        written.append(path)

        idx = np.arange(len(reports))
        fig, ax = plt.subplots(figsize=(11, 3.6))
        ax.bar(idx, _nan_if_none(r.dbscan_noise_size for r in reports), color="#6acc64", **_BAR_KW)
        ax.set_ylabel("mean noise cluster size")
        ax.set_title("DBSCAN noise cluster size by condition")
        _block_separators(ax, reports)
        _condition_ticks(ax, reports)
        fig.tight_layout()
        path = out / "dbscan_noise.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
