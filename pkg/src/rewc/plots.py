"""Static SVG emission: curvature heatmaps and accuracy-vs-task line plots.

Hand-rolled SVG keeps the output deterministic and trivially inspectable:
every heatmap cell is one ``<rect class="cell">``.
"""

import numpy as np

from .errors import DimensionError

_CELL = 12
_MARGIN = 40
_PLOT_W = 480
_PLOT_H = 320

_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def heatmap_svg(matrix, path, title=""):
    """Write an n x n heatmap, linearly normalized to the [0, 1] color range."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"heatmap needs a square matrix, got {m.shape}")
    n = m.shape[0]
    lo, hi = float(m.min()), float(m.max())
    span = hi - lo
    norm = np.zeros_like(m) if span == 0.0 else (m - lo) / span
    cell = max(2, min(_CELL, 720 // max(n, 1)))
    size = n * cell
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 2 * _MARGIN}" '
        f'height="{size + 2 * _MARGIN}" viewBox="0 0 {size + 2 * _MARGIN} {size + 2 * _MARGIN}">',
        f'<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text x="{_MARGIN}" y="{_MARGIN - 10}" font-family="monospace" '
            f'font-size="12">{title}</text>'
        )
    for i in range(n):
        for j in range(n):
            v = norm[i, j]
            out.append(
                f'<rect class="cell" x="{_MARGIN + j * cell}" y="{_MARGIN + i * cell}" '
                f'width="{cell}" height="{cell}" fill="black" fill-opacity="{v:.6f}"/>'
            )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out))
    return path


def lineplot_svg(series, path, title="", ylabel="accuracy"):
    """Accuracy-versus-task-count plot; one labeled polyline per method."""
    if not series:
        raise DimensionError("no series to plot")
    t_max = max(len(ys) for ys in series.values())
    if t_max == 0:
        raise DimensionError("series are empty")
    w, h = _PLOT_W, _PLOT_H
    x0, y0 = _MARGIN + 10, h - _MARGIN
    x1, y1 = w - _MARGIN, _MARGIN

    def sx(t):
        if t_max == 1:
            return (x0 + x1) / 2
        return x0 + (t - 1) * (x1 - x0) / (t_max - 1)

    def sy(v):
        return y0 - v * (y0 - y1)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{x0}" y="{y1 - 8}" font-family="monospace" font-size="12">{title}</text>',
        f'<text x="8" y="{(y0 + y1) / 2}" font-family="monospace" font-size="10" '
        f'transform="rotate(-90 8 {(y0 + y1) / 2})">{ylabel}</text>',
        f'<text x="{(x0 + x1) / 2}" y="{h - 8}" font-family="monospace" '
        f'font-size="10">tasks seen</text>',
    ]
    for t in range(1, t_max + 1):
        out.append(
            f'<text x="{sx(t):.1f}" y="{y0 + 14}" font-family="monospace" '
            f'font-size="9" text-anchor="middle">{t}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        out.append(
            f'<text x="{x0 - 6}" y="{sy(frac):.1f}" font-family="monospace" font-size="9" '
            f'text-anchor="end">{frac:.1f}</text>'
        )
    for si, (label, ys) in enumerate(sorted(series.items())):
        color = _SERIES_COLORS[si % len(_SERIES_COLORS)]
        pts = " ".join(f"{sx(t + 1):.2f},{sy(v):.2f}" for t, v in enumerate(ys))
        out.append(
            f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>'
        )
        out.append(
            f'<text x="{x1 - 90}" y="{y1 + 14 + 13 * si}" font-family="monospace" '
            f'font-size="10" fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out))
    return path
