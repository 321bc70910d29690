"""Rendering of boardsim result CSVs.

Three figure kinds: ``skew-hist`` (histogram of per-repetition skew),
``heatmap`` (one x,y,value CSV as a color map) and ``heatmap-grid``
(several heatmap CSVs on one subplot grid).  Heatmaps put the first CSV
column on x (frequency or duration), the second on y (bias or amplitude),
and normalize color per panel.  Inputs are opened read-only; outputs are
PNG files whose bytes depend only on the input data when timestamps are
suppressed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("skew-hist", "heatmap", "heatmap-grid")


class RenderError(ValueError):
    pass


@dataclass
class PlotJob:
    inputs: list[Path]
    kind: str
    out: Path
    grid: tuple[int, int] | None = None
    timestamp: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RenderError(f"unknown plot kind {self.kind!r}")
        if not self.inputs:
            raise RenderError("no input CSV given")
        for p in self.inputs:
            if not Path(p).exists():
                raise RenderError(f"input {p} does not exist")


def _read_columns(path, expected_n) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        try:
            header = next(reader)
        except StopIteration:
            raise RenderError(f"{path}: empty file") from None
        if len(header) < expected_n:
            raise RenderError(
                f"{path}: expected at least {expected_n} columns, header "
                f"has {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:expected_n]])
            except ValueError as e:
                raise RenderError(f"{path}:{lineno}: {e}") from None
    if not rows:
        raise RenderError(f"{path}: no data rows")
    return header, np.array(rows)


def _pivot(x, y, v):
    xs = np.unique(x)
    ys = np.unique(y)
    grid = np.full((len(ys), len(xs)), np.nan)
    xi = np.searchsorted(xs, x)
    yi = np.searchsorted(ys, y)
    grid[yi, xi] = v
    return xs, ys, grid


def _draw_heatmap(ax, path):
    header, data = _read_columns(path, 3)
    xs, ys, grid = _pivot(data[:, 0], data[:, 1], data[:, 2])
    # per-panel color normalization, like the reference figures
    ax.pcolormesh(xs, ys, grid, shading="nearest", cmap="viridis")
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1])
    return header[2]


def _annotate(fig, job: PlotJob):
    if job.timestamp:
        import datetime
        stamp = datetime.datetime.now().isoformat(timespec="seconds")
        fig.text(0.99, 0.01, stamp, ha="right", va="bottom", fontsize=6,
                 color="0.5")


def _save(fig, job: PlotJob):
    job.out.parent.mkdir(parents=True, exist_ok=True)
    meta = None if job.timestamp else {"Software": None}
    fig.savefig(job.out, dpi=120, metadata=meta)
    plt.close(fig)
    if job.out.stat().st_size == 0:
        raise RenderError(f"wrote empty image {job.out}")


def render(job: PlotJob) -> Path:
    """Render one job; returns the written image path."""
    if job.kind == "skew-hist":
        header, data = _read_columns(job.inputs[0], 2)
        skew_ps = data[:, 1] / 1000.0
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(skew_ps, bins=50, color="tab:blue")
        ax.set_xlabel(f"{header[1]} / 1000 (ps)")
        ax.set_ylabel("repetitions")
        ax.set_title("cross-board pulse skew")
        _annotate(fig, job)
        _save(fig, job)
    elif job.kind == "heatmap":
        fig, ax = plt.subplots(figsize=(6, 4.5))
        label = _draw_heatmap(ax, job.inputs[0])
        ax.set_title(f"{Path(job.inputs[0]).stem} ({label})")
        fig.tight_layout()
        _annotate(fig, job)
        _save(fig, job)
    else:   # heatmap-grid
        rows, cols = job.grid or _auto_grid(len(job.inputs))
        if rows * cols < len(job.inputs):
            raise RenderError(f"grid {rows}x{cols} cannot hold "
                              f"{len(job.inputs)} panels")
        fig, axes = plt.subplots(rows, cols,
                                 figsize=(3.2 * cols, 2.6 * rows),
                                 squeeze=False)
        for ax in axes.flat:
            ax.set_visible(False)
        for ax, path in zip(axes.flat, job.inputs):
            ax.set_visible(True)
            _draw_heatmap(ax, path)
            ax.set_title(Path(path).stem, fontsize=9)
        fig.tight_layout()
        _annotate(fig, job)
        _save(fig, job)
    return job.out


def _auto_grid(n: int) -> tuple[int, int]:
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    return rows, cols
