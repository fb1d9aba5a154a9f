"""Score and decision-boundary reports: delimited data files plus rendered figures."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import FEATURES, ReleaseDataset  # noqa: E402
from .detectors import (  # noqa: E402
    DETECTORS,
    BoundaryGrid,
    DetectorConfig,
    ScoreVector,
    decision_boundary_grid,
    score_all,
)
from .gate import build_matrix  # noqa: E402

SCORE_COLUMNS = ("ID",) + DETECTORS

_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}
# Keep PNG bytes stable across runs.
_PNG_METADATA = {"Software": None}


def _fmt(value: float) -> str:
    return repr(float(value))


def score_table(dataset: ReleaseDataset, config: DetectorConfig) -> dict[str, ScoreVector]:
    """Every release scored by every detector, all fit on the full dataset."""
    return score_all(build_matrix(dataset), config, DETECTORS)


def render_scores_csv(scores: dict[str, ScoreVector]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    ids = scores["lof"].row_ids
    for i, rid in enumerate(ids):
        writer.writerow([rid] + [_fmt(scores[name].scores[i]) for name in DETECTORS])
    return buf.getvalue()


def render_grid_csv(grid: BoundaryGrid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([FEATURES[grid.feature_x], FEATURES[grid.feature_y], "score"])
    for x, y, s in grid.cells():
        writer.writerow([_fmt(x), _fmt(y), _fmt(s)])
    return buf.getvalue()


def plot_scores(scores: dict[str, ScoreVector], config: DetectorConfig, path: Path) -> None:
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(len(DETECTORS), 1, figsize=(7, 1.9 * len(DETECTORS)), sharex=True)
        for ax, name in zip(axes, DETECTORS):
            sv = scores[name]
            ids = np.array(sv.row_ids)
            top = set(sv.ranking()[:3])
            colors = ["tab:red" if rid in top else "tab:blue" for rid in sv.row_ids]
            ax.bar(ids, sv.scores, color=colors, width=0.7)
            if name == "lof":
                ax.axhline(config.anomaly_threshold, color="tab:red", lw=0.8, ls="--", label="anomaly")
                ax.axhline(config.review_threshold, color="tab:orange", lw=0.8, ls=":", label="review")
                ax.legend(loc="upper left", frameon=False)
            ax.set_ylabel(name)
        axes[-1].set_xlabel("release ID")
        axes[-1].set_xticks(ids)
        axes[0].set_title("Outlier scores per release")
        fig.subplots_adjust(left=0.1, right=0.98, top=0.95, bottom=0.07, hspace=0.15)
        fig.savefig(path, metadata=_PNG_METADATA)
        plt.close(fig)


def plot_boundaries(
    grids: Sequence[BoundaryGrid], dataset: ReleaseDataset, path: Path
) -> None:
    data = dataset.feature_array()
    with plt.rc_context(_RC):
        cols = 2
        rows = int(np.ceil(len(grids) / cols))
        fig, axes = plt.subplots(rows, cols, figsize=(8, 3.6 * rows), squeeze=False)
        for ax, grid in zip(axes.ravel(), grids):
            cf = ax.contourf(grid.xs, grid.ys, grid.scores, levels=12, cmap="Blues")
            fig.colorbar(cf, ax=ax, shrink=0.85)
            ax.scatter(data[:, grid.feature_x], data[:, grid.feature_y], s=12, c="k")
            for rid, x, y in zip(dataset.ids, data[:, grid.feature_x], data[:, grid.feature_y]):
                ax.annotate(str(rid), (x, y), fontsize=6, xytext=(2, 2), textcoords="offset points")
            ax.set_title(grid.detector)
            ax.set_xlabel(FEATURES[grid.feature_x])
            ax.set_ylabel(FEATURES[grid.feature_y])
        for ax in axes.ravel()[len(grids):]:
            ax.set_visible(False)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_METADATA)
        plt.close(fig)


def write_scores_report(
    dataset: ReleaseDataset, config: DetectorConfig, out_dir: Path, figures: bool = True
) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = score_table(dataset, config)
    csv_path = out_dir / "scores.csv"
    csv_path.write_text(render_scores_csv(scores), encoding="utf-8", newline="")
    written = [csv_path]
    if figures:
        png = out_dir / "scores.png"
        plot_scores(scores, config, png)
        written.append(png)
    return written


def write_boundaries_report(
    dataset: ReleaseDataset,
    config: DetectorConfig,
    out_dir: Path,
    feature_x: int,
    feature_y: int,
    resolution: int = 100,
    figures: bool = True,
) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix = build_matrix(dataset)
    grids = [
        decision_boundary_grid(name, matrix, feature_x, feature_y, resolution, config)
        for name in DETECTORS
    ]
    written = []
    for grid in grids:
        path = out_dir / f"boundary_{grid.detector}.csv"
        path.write_text(render_grid_csv(grid), encoding="utf-8", newline="")
        written.append(path)
    if figures:
        png = out_dir / "boundaries.png"
        plot_boundaries(grids, dataset, png)
        written.append(png)
    return written
