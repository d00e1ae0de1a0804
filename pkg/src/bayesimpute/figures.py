"""Render the three analysis figures to image files.

Each renderer takes the same analysis object the CSV export is built from,
so the figure and the delimited data stay in lockstep.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_distribution(export, path) -> None:
    """Histogram of the MC imputation draws with the ground-truth marker."""
    fig, ax = plt.subplots(figsize=(6, 4))
    widths = export.bin_edges[1:] - export.bin_edges[:-1]
    ax.bar(
        export.bin_edges[:-1], export.counts, width=widths, align="edge",
        color="tab:blue", alpha=0.75, edgecolor="white",
    )
    if export.truth is not None:
        ax.axvline(export.truth, color="tab:red", linewidth=2, label="ground truth")
        ax.legend()
    i, t, j = export.cell
    ax.set_xlabel("imputed value")
    ax.set_ylabel("draw count")
    ax.set_title(f"MC imputation distribution (sample {i}, step {t}, feature {j})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_reliability(curve, path) -> None:
    """MAE of the lowest-variance subset as the retained fraction grows."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve.percentiles, curve.mae, marker="o", color="tab:blue")
    ax.set_xlabel("lowest-variance cells retained (%)")
    ax.set_ylabel("MAE of retained cells")
    ax.set_title("Imputation error vs variance cutoff")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_per_feature(rows, path) -> None:
    """Per-feature mean MC variance against per-feature MAE."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r.mean_variance for r in rows]
    ys = [r.mae for r in rows]
    ax.scatter(xs, ys, color="tab:blue")
    for r in rows:
        ax.annotate(r.name, (r.mean_variance, r.mae), textcoords="offset points",
                    xytext=(4, 4), fontsize=8)
    ax.set_xlabel("mean imputation variance")
    ax.set_ylabel("MAE")
    ax.set_title("Per-feature variability vs imputation error")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
