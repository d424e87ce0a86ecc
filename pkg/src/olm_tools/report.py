"""
Figures and a plain-text summary from the files of an experiment directory.

Line plots are written as SVG and image grids as binary PGM, so the report
needs no plotting library. Inputs that are missing are listed in the summary
and skipped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any
from xml.sax.saxutils import escape

import fsspec
import numpy as np
import pandas as pd

from olm_tools.artifacts import (
    ANALYSIS_FILE,
    CURVES_FILE,
    METRICS_FILE,
    RECONSTRUCTION_DIR,
    SWEEP_FILE,
    load_measurements,
    read_json,
    write_json,
)
from olm_tools.io.core import read, write

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    import numpy.typing as npt

    from olm_tools.type import PathLike, Tensor

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.txt"
REPORT_FILE = "report.json"
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 480, 320
MARGIN = 48


@dataclass
class Report:
    figures: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def svg_line_plot(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    *,
    title: str,
    xlabel: str,
    ylabel: str,
) -> str:
    """
    An SVG document with one polyline per entry of `series` and a legend
    naming them. Non-finite points are dropped.
    """
    cleaned = {}
    for name, (xs, ys) in series.items():
        x = np.asarray(xs, dtype=np.float64)
        y = np.asarray(ys, dtype=np.float64)
        keep = np.isfinite(x) & np.isfinite(y)
        cleaned[name] = (x[keep], y[keep])
    points = [v for x, y in cleaned.values() for v in zip(x, y)]
    if points:
        xs_all, ys_all = np.array(points).T
        x0, x1 = float(xs_all.min()), float(xs_all.max())
        y0, y1 = float(ys_all.min()), float(ys_all.max())
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    inner_w, inner_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(v: float) -> float:
        return MARGIN + (v - x0) / (x1 - x0) * inner_w

    def sy(v: float) -> float:
        return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * inner_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" font-size="10">{_fmt(x0)}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" font-size="10">{_fmt(x1)}</text>',
        f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10">{_fmt(y0)}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" font-size="10">{_fmt(y1)}</text>',
    ]
    legend = ['<g class="legend">']
    for i, (name, (x, y)) in enumerate(cleaned.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        row = MARGIN + 4 + 14 * i
        legend.append(
            f'<line x1="{WIDTH - MARGIN - 96}" y1="{row}" x2="{WIDTH - MARGIN - 80}" y2="{row}" stroke="{color}" stroke-width="2"/>'
        )
        legend.append(
            f'<text x="{WIDTH - MARGIN - 76}" y="{row + 4}" font-size="10">{escape(name)}</text>'
        )
    legend.append("</g>")
    return "\n".join([*parts, *legend, "</svg>"]) + "\n"


def _write_text(path: Path, text: str) -> None:
    with fsspec.open(str(path), mode="w") as fh:
        fh.write(text)


def _normalize(tile: Tensor) -> Tensor:
    low, high = float(tile.min()), float(tile.max())
    if high == low:
        return np.zeros_like(tile)
    return (tile - low) / (high - low)


def tile_grid(vectors: npt.ArrayLike, shape: tuple[int, int]) -> npt.NDArray[np.uint8]:
    """
    Lay out the columns of a d x k array as `shape` images, ceil(sqrt(k)) per
    row with no gutter, each min-max normalized to 0..255. Unused tiles are
    black.
    """
    columns = np.asarray(vectors, dtype=np.float64)
    height, width = shape
    d, k = columns.shape
    if d != height * width:
        msg = f"Cannot show vectors of length {d} as {height}x{width} images"
        raise ValueError(msg)
    per_row = math.ceil(math.sqrt(k))
    rows = math.ceil(k / per_row)
    grid = np.zeros((rows * height, per_row * width))
    for i in range(k):
        r, c = divmod(i, per_row)
        tile = _normalize(columns[:, i].reshape(height, width))
        grid[r * height : (r + 1) * height, c * width : (c + 1) * width] = tile
    return np.round(grid * 255).astype(np.uint8)


def square_shape(d: int) -> tuple[int, int] | None:
    side = math.isqrt(d)
    return (side, side) if side * side == d and side > 1 else None


def _sweep_figure(directory: Path, report: Report) -> None:
    path = directory / CURVES_FILE
    if not path.exists():
        report.missing.append(CURVES_FILE)
        return
    with fsspec.open(str(path), mode="r") as fh:
        frame = pd.read_csv(fh)
    series = {
        name.removesuffix("_mse"): (frame["theta"].to_numpy(), frame[name].to_numpy())
        for name in ("projection_mse", "prior_mse")
        if name in frame
    }
    svg = svg_line_plot(series, title="Reconstruction error by angle", xlabel="theta (rad)", ylabel="MSE")
    _write_text(directory / "sweep.svg", svg)
    report.figures.append("sweep.svg")
    sweep_path = directory / SWEEP_FILE
    if sweep_path.exists():
        optimum = read_json(sweep_path)
        report.lines.append(f"leading principal component at theta = {optimum['pc_theta']:.4f}")
        for name in ("projection", "prior"):
            if name in optimum:
                best = optimum[name]
                report.lines.append(f"{name} optimum at theta = {best['theta']:.4f} (MSE {best['mse']:.6g})")
    else:
        report.missing.append(SWEEP_FILE)


def _metric_figures(directory: Path, report: Report) -> None:
    path = directory / METRICS_FILE
    if not path.exists():
        report.missing.append(METRICS_FILE)
        return
    metrics = read_json(path)
    methods: dict[str, dict[str, Any]] = metrics.get("methods", {})
    for metric in ("psnr", "ssim", "mse"):
        series = {}
        for method, by_k in methods.items():
            ks = sorted(int(k) for k in by_k if f"mean_{metric}" in by_k[k])
            if ks:
                series[method] = (ks, [float(by_k[str(k)][f"mean_{metric}"]) for k in ks])
        if not series:
            continue
        name = f"{metric}_vs_k.svg"
        svg = svg_line_plot(series, title=f"Mean {metric.upper()} by number of measurements", xlabel="k", ylabel=metric.upper())
        _write_text(directory / name, svg)
        report.figures.append(name)

    header = f"{'method':<16}{'k':>6}{'PSNR':>10}{'MSE':>12}{'SSIM':>8}"
    report.lines.extend(["", header, "-" * len(header)])
    for method, by_k in sorted(methods.items()):
        for k in sorted(by_k, key=int):
            entry = by_k[k]
            ssim = _fmt(float(entry["mean_ssim"])) if "mean_ssim" in entry else "-"
            report.lines.append(
                f"{method:<16}{k:>6}{float(entry['mean_psnr']):>10.2f}{float(entry['mean_mse']):>12.3g}{ssim:>8}"
            )


def _measurement_grids(directory: Path, report: Report) -> None:
    measurements = load_measurements(directory)
    if not measurements:
        report.missing.append("measurements")
        return
    for (method, k), m in measurements.items():
        shape = square_shape(m.d)
        if shape is None:
            continue
        name = f"{method}_k{k}_vectors.pgm"
        write(directory / name, tile_grid(m.matrix, shape))
        report.figures.append(name)


def _reconstruction_grids(directory: Path, report: Report) -> None:
    folder = directory / RECONSTRUCTION_DIR
    if not folder.exists():
        return
    for path in sorted(folder.glob("*.olmt")):
        images = read(path)
        shape = square_shape(images.shape[1])
        if shape is None:
            continue
        name = f"{path.stem}_images.pgm"
        write(directory / name, tile_grid(images.T, shape))
        report.figures.append(name)


def _analysis_lines(directory: Path, report: Report) -> None:
    path = directory / ANALYSIS_FILE
    if not path.exists():
        report.missing.append(ANALYSIS_FILE)
        return
    analysis = read_json(path)
    report.lines.extend(["", f"{'measurement':<24}{'mean |skew|':>12}{'mean MI':>10}"])
    for name, entry in sorted(analysis.get("measurements", {}).items()):
        report.lines.append(
            f"{name:<24}{float(entry['mean_abs_skewness']):>12.4f}{float(entry['mean_mi']):>10.4f}"
        )


def render_report(directory: PathLike) -> Report:
    """
    Render every figure the files in `directory` allow, then write
    `summary.txt` and `report.json` listing the figures and missing inputs.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    report = Report()
    _sweep_figure(root, report)
    _metric_figures(root, report)
    _measurement_grids(root, report)
    _reconstruction_grids(root, report)
    _analysis_lines(root, report)

    text = [f"figures: {len(report.figures)}", *(f"  {name}" for name in report.figures)]
    if report.missing:
        text.append("missing inputs: " + ", ".join(report.missing))
    text.extend(report.lines)
    _write_text(root / SUMMARY_FILE, "\n".join(text) + "\n")
    write_json(root / REPORT_FILE, {"figures": report.figures, "missing": report.missing})
    logger.info("Rendered %d figures in %s", len(report.figures), root)
    return report
