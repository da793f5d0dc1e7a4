"""CSV tables and SVG heatmaps for sweep results."""

from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

from handgrid.gridlab import THRESHOLDS

CELLS_HEADER = ["hand", "column", "row", "x", "y", "seed", "episode_index", "successes"]
SUMMARY_HEADER = ["hand", "column", "row", "x", "y", "n_seeds", "mean_s"]
TABLE3_HEADER = ["hand", "max_s", "sum_s"] + [f"count_ge_{t}" for t in THRESHOLDS]
CURVES_HEADER = ["hand", "column", "row", "seed", "epoch", "mean_reward", "mean_successes"]
EPISODES_HEADER = ["episode_index", "successes", "fell", "steps"]
COMPARE_HEADER = ["hand_a", "hand_b", "W", "p", "p_adjusted", "significant_at_0.05", "error"]
BOX_HEADER = ["hand", "n", "mean", "median", "q1", "q3", "min", "max"]


def _num(v):
    return repr(float(v))


def _writer(path_or_fh):
    if hasattr(path_or_fh, "write"):
        return None, csv.writer(path_or_fh, lineterminator="\n")
    fh = open(path_or_fh, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _write_rows(dest, header, rows):
    fh, w = _writer(dest)
    try:
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not None:
            fh.close()


def _ordered(results):
    return sorted(results, key=lambda r: (r.cell.row, r.cell.column, r.seed))


def write_cells_csv(dest, results):
    rows = []
    for r in _ordered(results):
        for i, c in enumerate(r.counts):
            rows.append([r.hand, r.cell.column, r.cell.row, _num(r.cell.xy[0]), _num(r.cell.xy[1]), r.seed, i, int(c)])
    _write_rows(dest, CELLS_HEADER, rows)


def write_summary_csv(dest, hand, results):
    per_cell = {}
    for r in _ordered(results):
        per_cell.setdefault(r.cell.index, (r.cell, []))[1].append(r.mean_consecutive_successes)
    rows = []
    for (col, row), (cell, means) in sorted(per_cell.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        rows.append([hand, col, row, _num(cell.xy[0]), _num(cell.xy[1]), len(means), f"{float(np.mean(means)):.6f}"])
    _write_rows(dest, SUMMARY_HEADER, rows)


def write_table3_csv(dest, summaries):
    """``summaries``: list of (hand, GridSummary)."""
    rows = [[hand, f"{s.max_s:.2f}", f"{s.sum_s:.2f}"] + [s.count_ge[t] for t in THRESHOLDS] for hand, s in summaries]
    _write_rows(dest, TABLE3_HEADER, rows)


def write_curves_csv(dest, results):
    rows = []
    for r in _ordered(results):
        for epoch, reward, succ in r.curve:
            rows.append([r.hand, r.cell.column, r.cell.row, r.seed, epoch, _num(reward), _num(succ)])
    _write_rows(dest, CURVES_HEADER, rows)


def write_episodes_csv(dest, episodes):
    rows = [[i, e.consecutive_successes, int(e.fell), e.steps] for i, e in enumerate(episodes)]
    _write_rows(dest, EPISODES_HEADER, rows)


def read_counts_csv(path):
    """Return (label or None, successes in file order) from any CSV with a ``successes`` column."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "successes" not in rows[0]:
        raise ValueError(f"{path}: expected a CSV with a 'successes' column")
    hands = {r.get("hand") for r in rows} - {None, ""}
    label = hands.pop() if len(hands) == 1 else None
    return label, [float(r["successes"]) for r in rows]


# -- heatmap ------------------------------------------------------------------

# a short perceptually ordered ramp (dark purple -> teal -> yellow)
_RAMP = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=float,
)


def _color(t):
    t = min(max(t, 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(math.floor(t)), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def heatmap_svg(matrix, spec, title="", cell_px=36):
    """SVG 1.1 heatmap; row 0 (lowest y) is drawn at the bottom.

    Colors scale linearly from 0 to the matrix maximum. Every cell carries its
    value; the best cell gets a green outline and the palm-origin cell, when on
    the grid, a black frame.
    """
    m = np.asarray(matrix, dtype=float)
    n_rows, n_cols = m.shape
    finite = m[np.isfinite(m)]
    vmax = float(finite.max()) if finite.size else 0.0
    left, top, bar_w = 56, 34 if title else 12, 16
    width = left + n_cols * cell_px + 24 + bar_w + 48
    height = top + n_rows * cell_px + 44
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
    ]
    if title:
        out.append(f'<text x="{left}" y="20" font-size="14">{escape(title)}</text>')

    def xy(col, row):
        return left + col * cell_px, top + (n_rows - 1 - row) * cell_px

    best = None
    if finite.size:
        flat = np.where(np.isfinite(m), m, -np.inf)
        best = np.unravel_index(int(np.argmax(flat)), m.shape)
    for row in range(n_rows):
        for col in range(n_cols):
            x, y = xy(col, row)
            v = m[row, col]
            if np.isfinite(v):
                t = v / vmax if vmax > 0 else 0.0
                fill, label = _color(t), f"{v:.1f}"
                ink = "#000000" if t > 0.6 else "#ffffff"
            else:
                fill, label, ink = "#d0d0d0", "n/a", "#555555"
            out.append(f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" fill="{fill}" stroke="#ffffff"/>')
            out.append(
                f'<text x="{x + cell_px / 2:.1f}" y="{y + cell_px / 2 + 4:.1f}" font-size="10" '
                f'text-anchor="middle" fill="{ink}">{label}</text>'
            )
    origin_col = -spec.x_min / spec.spacing
    origin_row = -spec.y_min / spec.spacing
    if abs(origin_col - round(origin_col)) < 1e-9 and abs(origin_row - round(origin_row)) < 1e-9:
        oc, orow = int(round(origin_col)), int(round(origin_row))
        if 0 <= oc < n_cols and 0 <= orow < n_rows:
            x, y = xy(oc, orow)
            out.append(
                f'<rect x="{x + 1}" y="{y + 1}" width="{cell_px - 2}" height="{cell_px - 2}" '
                'fill="none" stroke="#000000" stroke-width="2"/>'
            )
    if best is not None:
        x, y = xy(best[1], best[0])
        out.append(
            f'<rect x="{x + 2}" y="{y + 2}" width="{cell_px - 4}" height="{cell_px - 4}" '
            'fill="none" stroke="#00b000" stroke-width="3"/>'
        )
    # axis ticks in cm
    base_y = top + n_rows * cell_px
    for col in range(n_cols):
        x, _ = xy(col, 0)
        cm = (spec.x_min + col * spec.spacing) * 100.0
        out.append(f'<text x="{x + cell_px / 2:.1f}" y="{base_y + 14}" font-size="9" text-anchor="middle">{cm:.0f}</text>')
    for row in range(n_rows):
        _, y = xy(0, row)
        cm = (spec.y_min + row * spec.spacing) * 100.0
        out.append(f'<text x="{left - 6}" y="{y + cell_px / 2 + 3:.1f}" font-size="9" text-anchor="end">{cm:.0f}</text>')
    out.append(f'<text x="{left + n_cols * cell_px / 2:.1f}" y="{base_y + 32}" font-size="11" text-anchor="middle">x (cm)</text>')
    out.append(
        f'<text x="14" y="{top + n_rows * cell_px / 2:.1f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + n_rows * cell_px / 2:.1f})">y (cm)</text>'
    )
    # color bar
    bx = left + n_cols * cell_px + 24
    bar_h = n_rows * cell_px
    steps = 32
    for k in range(steps):
        t = 1.0 - (k + 0.5) / steps
        out.append(
            f'<rect x="{bx}" y="{top + k * bar_h / steps:.2f}" width="{bar_w}" height="{bar_h / steps + 0.5:.2f}" '
            f'fill="{_color(t)}"/>'
        )
    out.append(f'<text x="{bx + bar_w + 4}" y="{top + 8}" font-size="9">{vmax:.1f}</text>')
    out.append(f'<text x="{bx + bar_w + 4}" y="{top + bar_h}" font-size="9">0.0</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_heatmap_svg(path, matrix, spec, title=""):
    with open(path, "w") as fh:
        fh.write(heatmap_svg(matrix, spec, title))
