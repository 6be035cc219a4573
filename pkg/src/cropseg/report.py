"""CSV and SVG emission for metric tables and curves.

Metric cells print with four decimals; undefined values print as the literal
string "nan". Curves render as standalone SVG documents with axes fixed to
the unit square.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

REPORT_COLUMNS = ("ir", "loss", "sensitivity", "specificity", "precision",
                  "AUC", "aPr", "Dice", "eDist")

_PALETTE = ("#2b6cb0", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#16a085")


def format_metric(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.4f}"


def write_report_csv(path, rows):
    """rows: sequences of (ir:int, loss:str, then 7 float metrics)."""
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        ir, loss = row[0], row[1]
        lines.append(",".join([str(int(ir)), str(loss)] +
                              [format_metric(v) for v in row[2:]]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_report_csv(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != REPORT_COLUMNS:
        raise ValueError(f"unexpected report header in {path}")
    out = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        cells = ln.split(",")
        if len(cells) != len(REPORT_COLUMNS):
            raise ValueError(f"malformed report row: {ln!r}")
        row = {"ir": int(cells[0]), "loss": cells[1]}
        for name, val in zip(REPORT_COLUMNS[2:], cells[2:]):
            row[name] = float(val)
        out.append(row)
    return out


def write_curve_csv(path, columns: tuple[str, ...], arrays):
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if len(arrays) != len(columns) or any(a.size != arrays[0].size for a in arrays):
        raise ValueError("columns and arrays must align")
    lines = [",".join(columns)]
    for i in range(arrays[0].size):
        lines.append(",".join(f"{a[i]:.6f}" for a in arrays))
    Path(path).write_text("\n".join(lines) + "\n")


def curve_svg(series, title: str, xlabel: str, ylabel: str) -> str:
    """series: list of (label, x, y) with data in the unit square."""
    w, h = 480, 360
    ml, mr, mt, mb = 55, 15, 34, 45
    pw, ph = w - ml - mr, h - mt - mb

    def sx(v):
        return ml + float(np.clip(v, 0.0, 1.0)) * pw

    def sy(v):
        return h - mb - float(np.clip(v, 0.0, 1.0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = sx(t), sy(t)
        parts.append(f'<line x1="{x:.1f}" y1="{h - mb}" x2="{x:.1f}" y2="{h - mb + 4}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{h - mb + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{t:g}</text>')
        parts.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{ml - 7}" y="{y + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{t:g}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
                 f'stroke="black"/>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{h - 8}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    parts.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{ylabel}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = mt + 14 + 14 * i
        parts.append(f'<line x1="{w - mr - 110}" y1="{ly - 4:.1f}" x2="{w - mr - 90}" '
                     f'y2="{ly - 4:.1f}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{w - mr - 85}" y="{ly:.1f}" font-family="sans-serif" '
                     f'font-size="10">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
