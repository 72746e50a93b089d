"""Cross-run analyses: Spearman correlations, rank trajectories, reports.

All numeric report output uses 4 decimal places. Undefined correlations
(constant columns) are carried as NaN and rendered as blank cells, never as
zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .trainer import RunRecord, select_best

OVERALL_COLUMN = "overall"


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean of the ranks they span."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-ranked values."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1 or len(xa) != len(ya):
        raise ValueError("inputs must be equal-length 1-D sequences")
    if len(xa) < 2:
        raise ValueError("need at least two observations")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise ValueError("correlation undefined for a constant sequence")
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))


@dataclass
class ScoreTable:
    """Rows are runs (keyed by hyperparameter hash), columns task scores + overall."""

    row_keys: list[str]
    columns: list[str]
    values: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[RunRecord]) -> "ScoreTable":
        ok = [r for r in records if r.error is None and r.overall is not None]
        if not ok:
            raise ValueError("no successful runs to tabulate")
        tasks = sorted({t for r in ok for t in r.eval})
        for r in ok:
            missing = set(tasks) - set(r.eval)
            if missing:
                raise ValueError(f"run {r.run_hash} lacks task scores: {sorted(missing)}")
        ok = sorted(ok, key=lambda r: r.run_hash)
        columns = tasks + [OVERALL_COLUMN]
        values = np.array(
            [[r.eval[t] for t in tasks] + [r.overall] for r in ok], dtype=np.float64
        )
        return cls(row_keys=[r.run_hash for r in ok], columns=columns, values=values)


@dataclass
class CorrelationMatrix:
    labels: list[str]
    values: np.ndarray  # square; NaN marks undefined entries


def correlation_matrix(table: ScoreTable) -> CorrelationMatrix:
    """Pairwise Spearman over all columns; constant columns yield NaN entries."""
    if len(table.row_keys) < 2:
        raise ValueError("need at least two runs to correlate")
    n = len(table.columns)
    out = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i, n):
            try:
                rho = spearman(table.values[:, i], table.values[:, j])
            except ValueError:
                rho = np.nan
            out[i, j] = rho
            out[j, i] = rho
    return CorrelationMatrix(labels=list(table.columns), values=out)


@dataclass
class Trajectories:
    """Rows sorted ascending by overall; one score series per column."""

    row_keys: list[str]
    series: dict[str, list[float]]


def rank_trajectories(table: ScoreTable) -> Trajectories:
    if len(table.row_keys) < 2:
        raise ValueError("need at least two runs to order")
    overall = table.values[:, table.columns.index(OVERALL_COLUMN)]
    order = sorted(range(len(table.row_keys)), key=lambda i: (overall[i], table.row_keys[i]))
    series = {
        col: [float(table.values[i, c]) for i in order] for c, col in enumerate(table.columns)
    }
    return Trajectories(row_keys=[table.row_keys[i] for i in order], series=series)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def _heat_color(v: float) -> str:
    """Diverging palette: -1 blue, 0 white, +1 red."""
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        ch = int(round(255 * (1 - v)))
        return f"rgb(255,{ch},{ch})"
    ch = int(round(255 * (1 + v)))
    return f"rgb({ch},{ch},255)"


_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]


def correlation_svg(matrix: CorrelationMatrix) -> str:
    """Static heatmap: one rect per defined entry, blanks where undefined."""
    n = len(matrix.labels)
    cell, left, top = 46, 150, 110
    width, height = left + n * cell + 20, top + n * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<style>text{font-family:sans-serif;font-size:11px;}</style>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for i, label in enumerate(matrix.labels):
        y = top + i * cell + cell / 2 + 4
        parts.append(f'<text x="{left - 6}" y="{y}" text-anchor="end">{escape(label)}</text>')
        x = left + i * cell + cell / 2
        parts.append(
            f'<text x="{x}" y="{top - 6}" text-anchor="start" '
            f'transform="rotate(-45 {x} {top - 6})">{escape(label)}</text>'
        )
    for i in range(n):
        for j in range(n):
            v = matrix.values[i, j]
            x, y = left + j * cell, top + i * cell
            if np.isnan(v):
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                    f'fill="none" stroke="#cccccc"/>'
                )
                continue
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_color(v)}" stroke="#888888"/>'
            )
            parts.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" '
                f'text-anchor="middle">{_fmt(v)}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def trajectories_svg(traj: Trajectories) -> str:
    """Line chart of each column's scores with runs ordered by ascending overall."""
    columns = [c for c in traj.series if c != OVERALL_COLUMN] + [OVERALL_COLUMN]
    n = len(traj.row_keys)
    left, top, plot_w, plot_h = 60, 20, max(300, 24 * n), 260
    legend_w = 12 + 8 * max(len(c) for c in columns)
    width = left + plot_w + 30 + legend_w
    height = top + plot_h + 50
    all_vals = [v for s in traj.series.values() for v in s]
    lo, hi = min(all_vals), max(all_vals)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def sx(i: int) -> float:
        return left + (plot_w * i / max(1, n - 1))

    def sy(v: float) -> float:
        return top + plot_h * (1 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<style>text{font-family:sans-serif;font-size:11px;}</style>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" '
        f'stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        parts.append(
            f'<text x="{left - 6}" y="{sy(v) + 4}" text-anchor="end">{_fmt(v)}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2}" y="{top + plot_h + 30}" text-anchor="middle">'
        f"runs by ascending {OVERALL_COLUMN}</text>"
    )
    for idx, col in enumerate(columns):
        color = "#000000" if col == OVERALL_COLUMN else _PALETTE[idx % len(_PALETTE)]
        stroke = 2.5 if col == OVERALL_COLUMN else 1.2
        points = " ".join(
            f"{sx(i):.1f},{sy(v):.1f}" for i, v in enumerate(traj.series[col])
        )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{stroke}" points="{points}"/>'
        )
        ly = top + 16 * idx + 10
        lx = left + plot_w + 30
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="{stroke}"/>'
        )
        parts.append(f'<text x="{lx + 24}" y="{ly}">{escape(col)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(records: Sequence[RunRecord], out_dir: str | Path) -> list[Path]:
    """Write scores.csv, correlation.csv/.svg, trajectories.svg, leaderboard.md."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ScoreTable.from_records(records)

    scores_path = out / "scores.csv"
    with open(scores_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run"] + table.columns)
        for key, row in zip(table.row_keys, table.values):
            w.writerow([key] + [_fmt(v) for v in row])

    if len(table.row_keys) >= 2:
        matrix = correlation_matrix(table)
        traj = rank_trajectories(table)
    else:
        matrix = CorrelationMatrix(
            labels=list(table.columns),
            values=np.full((len(table.columns),) * 2, np.nan),
        )
        traj = Trajectories(row_keys=list(table.row_keys), series={
            col: [float(table.values[0, c])] for c, col in enumerate(table.columns)
        })

    corr_csv = out / "correlation.csv"
    with open(corr_csv, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow([""] + matrix.labels)
        for label, row in zip(matrix.labels, matrix.values):
            w.writerow([label] + ["" if np.isnan(v) else _fmt(v) for v in row])

    corr_svg = out / "correlation.svg"
    corr_svg.write_text(correlation_svg(matrix), encoding="utf-8")
    traj_svg = out / "trajectories.svg"
    traj_svg.write_text(trajectories_svg(traj), encoding="utf-8")

    ok = [r for r in records if r.error is None and r.overall is not None]
    ranked = sorted(
        ok,
        key=lambda r: (
            -r.overall,
            r.hyperparams.epochs,
            r.hyperparams.num_patterns,
            r.hyperparams.batch_size,
            r.run_hash,
        ),
    )
    assert ranked[0].run_hash == select_best(records).run_hash
    lb_path = out / "leaderboard.md"
    tasks = [c for c in table.columns if c != OVERALL_COLUMN]
    with open(lb_path, "w", encoding="utf-8") as f:
        f.write("| rank | run | epochs | patterns | batch | " + " | ".join(tasks) + " | overall |\n")
        f.write("|" + " --- |" * (5 + len(tasks) + 1) + "\n")
        for rank, r in enumerate(ranked, start=1):
            cells = [
                str(rank), r.run_hash, str(r.hyperparams.epochs),
                str(r.hyperparams.num_patterns), str(r.hyperparams.batch_size),
            ]
            cells += [_fmt(r.eval[t]) for t in tasks]
            cells.append(_fmt(r.overall))
            f.write("| " + " | ".join(cells) + " |\n")
    return [scores_path, corr_csv, corr_svg, traj_svg, lb_path]
