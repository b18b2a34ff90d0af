"""Deterministic SVG rendering for pose CSVs and importance-coefficient traces.

SVGs are assembled from formatted strings (no plotting library), so identical
inputs produce byte-identical files. Poses draw as stick figures: the 150
coordinates are treated as 75 (x, y) points per frame, connected in order.
Alpha traces draw as a stacked-area chart over frames.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from intensign.corpus import FRAME_DIM

_COLORS = ("#4878cf", "#d65f5f", "#6acc65", "#956cb4", "#c4ad66", "#77bedb")


def write_pose_csv(path, frames: np.ndarray, counters: np.ndarray) -> None:
    """One row per frame: 150 joint coordinates then the counter value."""
    frames = np.asarray(frames)
    counters = np.asarray(counters)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"j{i}" for i in range(FRAME_DIM)] + ["counter"])
        for row, c in zip(frames, counters):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(c))])


def read_pose_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "counter" or len(rows[0]) != FRAME_DIM + 1:
        raise ValueError(f"{path}: not a pose CSV (need {FRAME_DIM} joints + counter header)")
    try:
        data = np.asarray([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed pose CSV: {exc}") from exc
    if data.size == 0:
        raise ValueError(f"{path}: pose CSV has no frames")
    return data[:, :FRAME_DIM], data[:, FRAME_DIM]


def write_alpha_csv(path, trace: np.ndarray) -> None:
    """Rows of (frame index, alpha_1..alpha_k)."""
    trace = np.asarray(trace)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"alpha_{i + 1}" for i in range(trace.shape[1])])
        for t, row in enumerate(trace):
            writer.writerow([t] + [repr(float(v)) for v in row])


def read_alpha_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "frame":
        raise ValueError(f"{path}: not an alpha-trace CSV")
    try:
        return np.asarray([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed alpha CSV: {exc}") from exc


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def pose_svg(frames: np.ndarray, counters: np.ndarray | None = None, *,
             cell: int = 120) -> str:
    """One <g> stick figure per frame, laid out left to right."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    points = frames.reshape(n, FRAME_DIM // 2, 2)
    lo = points.reshape(-1, 2).min(axis=0)
    hi = points.reshape(-1, 2).max(axis=0)
    span = np.maximum(hi - lo, 1e-9)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{cell * n}" height="{cell}" '
             f'viewBox="0 0 {cell * n} {cell}">']
    pad = 10
    for f in range(n):
        xy = (points[f] - lo) / span * (cell - 2 * pad) + pad
        xs = xy[:, 0] + f * cell
        ys = cell - xy[:, 1]  # SVG y grows downward
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
        parts.append(f'<g id="frame{f}">')
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{_COLORS[0]}" '
                     'stroke-width="1"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="1.5" fill="#333333"/>')
        if counters is not None:
            parts.append(f'<text x="{_fmt(f * cell + 4)}" y="12" font-size="9">'
                         f'c={counters[f]:.2f}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def alpha_svg(trace: np.ndarray, *, width: int = 480, height: int = 200) -> str:
    """Stacked-area chart of per-frame importance coefficients."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 2 or trace.shape[0] < 1:
        raise ValueError("alpha trace must be a (T, k) matrix")
    t, k = trace.shape
    cum = np.cumsum(trace, axis=1)
    xs = np.linspace(0, width, t) if t > 1 else np.asarray([0.0, float(width)])

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    lower = np.zeros(t)
    for i in range(k):
        upper = cum[:, i]
        up = upper if t > 1 else np.repeat(upper, 2)
        low = lower if t > 1 else np.repeat(lower, 2)
        top = [f"{_fmt(x)},{_fmt(height - y * height)}" for x, y in zip(xs, up)]
        bottom = [f"{_fmt(x)},{_fmt(height - y * height)}" for x, y in zip(xs[::-1], low[::-1])]
        parts.append(f'<polygon points="{" ".join(top + bottom)}" '
                     f'fill="{_COLORS[i % len(_COLORS)]}" fill-opacity="0.8"/>')
        lower = upper
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_file(csv_path, out_path) -> str:
    """Dispatch on the CSV header: pose -> stick figures, alpha -> area chart."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header and header[0] == "frame":
        svg = alpha_svg(read_alpha_csv(csv_path))
    else:
        frames, counters = read_pose_csv(csv_path)
        svg = pose_svg(frames, counters)
    Path(out_path).write_text(svg, encoding="utf-8")
    return str(out_path)
