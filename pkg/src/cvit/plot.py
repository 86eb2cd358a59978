"""Static SVG figures: line plots of 1D profiles and heatmaps of 2D fields.

Heatmaps use a fixed five-stop colormap (dark purple, blue, teal, green,
yellow; the viridis anchors) with linear interpolation in RGB between stops,
scaled to the field's min and max.
"""

from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

import numpy as np

COLORMAP = np.array([[0x44, 0x01, 0x54], [0x3B, 0x52, 0x8B], [0x21, 0x91, 0x8C],
                     [0x5E, 0xC9, 0x62], [0xFD, 0xE7, 0x25]], dtype=np.float64)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
WIDTH, HEIGHT, MARGIN = 640, 360, 48


def colormap(t) -> list[str]:
    """Map values in [0, 1] to hex colors."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * (len(COLORMAP) - 1)
    lo = np.minimum(np.floor(t).astype(int), len(COLORMAP) - 2)
    frac = (t - lo)[..., None]
    rgb = np.rint(COLORMAP[lo] * (1 - frac) + COLORMAP[lo + 1] * frac).astype(int)
    return ["#%02x%02x%02x" % tuple(c) for c in rgb.reshape(-1, 3)]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
    caption = f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>'
    return "\n".join([head, caption, *body, "</svg>"]) + "\n"


def line_plot(x, series: dict[str, np.ndarray], title: str = "") -> str:
    """One ``<polyline>`` per series over a shared abscissa."""
    x = np.asarray(x, dtype=np.float64)
    ys = np.stack([np.asarray(v, dtype=np.float64) for v in series.values()])
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    px = MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)
    body = [f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
            'fill="none" stroke="#888"/>']
    for i, (name, y) in enumerate(zip(series, ys)):
        py = HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                    f"<title>{escape(name)}</title></polyline>")
        body.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * (i + 1)}" font-size="11" '
                    f'fill="{color}">{escape(name)}</text>')
    body.append(f'<text x="{MARGIN}" y="{HEIGHT - 16}" font-size="11">x: [{x0:.3g}, {x1:.3g}]  '
                f"y: [{y0:.3g}, {y1:.3g}]</text>")
    return _svg(body, title)


def heatmap(values, title: str = "") -> str:
    """One ``<rect>`` per cell of a 2D field; row 0 is drawn at the top."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"heatmap needs a 2D array, got shape {values.shape}")
    lo, hi = float(values.min()), float(values.max())
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    colors = colormap(scaled)
    rows, cols = values.shape
    cw = (WIDTH - 2 * MARGIN) / cols
    ch = (HEIGHT - 2 * MARGIN) / rows
    body = []
    for k, color in enumerate(colors):
        r, c = divmod(k, cols)
        body.append(f'<rect x="{_fmt(MARGIN + c * cw)}" y="{_fmt(MARGIN + r * ch)}" width="{_fmt(cw)}" '
                    f'height="{_fmt(ch)}" fill="{color}"/>')
    body.append(f'<text x="{MARGIN}" y="{HEIGHT - 16}" font-size="11">range [{lo:.3g}, {hi:.3g}]</text>')
    return _svg(body, title)


def read_table(text: str) -> tuple[list[str], np.ndarray]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise ValueError("CSV needs a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"non-numeric CSV entry: {exc}") from None
    if data.shape[1] != len(header):
        raise ValueError("CSV rows do not match the header width")
    return header, data


def plot_csv(text: str, title: str = "") -> str:
    """Line plot when the table has one coordinate column ``y1``; heatmap of
    the first value column when it has ``y1`` and ``y2``.  Without a ``y1``
    column the first column is the abscissa."""
    header, data = read_table(text)
    if "y2" in header:
        i1, i2 = header.index("y1"), header.index("y2")
        value = next(i for i, h in enumerate(header) if h not in ("y1", "y2"))
        xs, ys = np.unique(data[:, i1]), np.unique(data[:, i2])
        grid = np.full((len(xs), len(ys)), np.nan)
        grid[np.searchsorted(xs, data[:, i1]), np.searchsorted(ys, data[:, i2])] = data[:, value]
        if np.isnan(grid).any():
            raise ValueError("2D CSV does not cover a full tensor-product grid")
        return heatmap(grid, title or header[value])
    xi = header.index("y1") if "y1" in header else 0
    series = {h: data[:, i] for i, h in enumerate(header) if i != xi}
    if not series:
        raise ValueError("CSV has no value columns to plot")
    return line_plot(data[:, xi], series, title)
