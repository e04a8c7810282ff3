"""Matplotlib renderings written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .raster_io import DisparityMap

DPI = 110


def save_disparity_figure(
    path: str | Path, disparity: DisparityMap, title: str = "disparity"
) -> None:
    fig, ax = plt.subplots(figsize=(7, 5), dpi=DPI)
    shown = np.where(disparity.valid, disparity.values, np.nan)
    im = ax.imshow(shown, cmap="turbo", interpolation="nearest")
    ax.set_title(title)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, shrink=0.85, label="disparity (px)")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def save_search_ratio_figure(path: str | Path, ratios_percent: list[float]) -> None:
    """Bar chart of the searched disparity fraction per pyramid level."""
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=DPI)
    levels = np.arange(len(ratios_percent))
    ax.bar(levels, ratios_percent, color="#3466aa")
    ax.set_xlabel("pyramid level (0 = source)")
    ax.set_ylabel("searched range (%)")
    ax.set_xticks(levels)
    ax.set_ylim(0, 105)
    for lvl, r in zip(levels, ratios_percent):
        ax.annotate(f"{r:.1f}", (lvl, r), ha="center", va="bottom", fontsize=8)
    ax.set_title("per-level search ratio")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_matrix_heatmap(
    path: str | Path,
    matrix: np.ndarray,
    title: str,
    xlabel: str = "child disparity",
    ylabel: str = "parent disparity",
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5), dpi=DPI)
    im = ax.imshow(matrix, aspect="auto", cmap="viridis", interpolation="nearest")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_prior_figure(path: str | Path, prior: np.ndarray, level: int) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=DPI)
    ax.bar(np.arange(prior.size), prior, color="#888833", width=0.9)
    ax.set_xlabel("disparity")
    ax.set_ylabel("prior probability")
    ax.set_title(f"sampled disparity prior, level {level}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_bench_chart(path: str | Path, rows: list[dict]) -> None:
    """Grouped bars of median seconds per method, one group per scene."""
    scenes = sorted({r["name"] for r in rows})
    methods = []
    for r in rows:
        if r["method"] not in methods:
            methods.append(r["method"])
    by_key = {(r["name"], r["method"]): r["seconds"] for r in rows}
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(5, 1.8 * len(scenes)), 4), dpi=DPI)
    xs = np.arange(len(scenes))
    for i, method in enumerate(methods):
        vals = [by_key.get((s, method), np.nan) for s in scenes]
        ax.bar(xs + (i - (len(methods) - 1) / 2) * width, vals, width, label=method)
    ax.set_xticks(xs)
    ax.set_xticklabels(scenes, rotation=20, ha="right")
    ax.set_ylabel("median seconds")
    ax.set_title("runtime by method")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_error_chart(path: str | Path, rows: list[dict]) -> None:
    """Bars of err>=1 / err>=2 per (scene, method) row that carries them."""
    rows = [r for r in rows if "err_ge_1" in r]
    if not rows:
        return
    labels = [f"{r['name']}\n{r['method']}" for r in rows]
    xs = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(rows)), 4), dpi=DPI)
    ax.bar(xs - 0.2, [r["err_ge_1"] for r in rows], 0.4, label="err >= 1")
    ax.bar(xs + 0.2, [r["err_ge_2"] for r in rows], 0.4, label="err >= 2")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("error rate (%)")
    ax.set_title("non-occluded error rates")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
