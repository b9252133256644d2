"""Deterministic SVG figures: cell maps, binned effects, Engel curves, scaled effects.

All numbers are written with fixed precision and elements are emitted in a
fixed order, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .config import RunConfig
from .geo import cell_indices
from .rasterize import CellTable, WinsorSpec, winsorize

# viridis, sampled at nine stops
PALETTE = ("#440154", "#472d7b", "#3b528b", "#2c728e", "#21918c", "#28ae80", "#5ec962",
           "#addc30", "#fde725")
SERIES = ("#1f4e79", "#c0504d", "#4f7f3f", "#7f6084")

MAP_PX = 480
MARGIN = 50


def _hex(c: str) -> np.ndarray:
    return np.array([int(c[i:i + 2], 16) for i in (1, 3, 5)], dtype=float)


def color_for(value: float, vmin: float, vmax: float) -> str:
    """Linear interpolation through the palette; constant maps use the middle color."""
    if not math.isfinite(value):
        return "#cccccc"
    t = 0.5 if vmax <= vmin else min(max((value - vmin) / (vmax - vmin), 0.0), 1.0)
    pos = t * (len(PALETTE) - 1)
    i = min(int(math.floor(pos)), len(PALETTE) - 2)
    c = _hex(PALETTE[i]) * (1 - (pos - i)) + _hex(PALETTE[i + 1]) * (pos - i)
    r, g, b = (int(round(v)) for v in c)
    return f"#{r:02x}{g:02x}{b:02x}"


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.4g}"


class _Svg:
    def __init__(self, width: int, height: int, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
            f'{escape(title)}</text>',
        ]

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, anchor="middle", size=11) -> None:
        self.add(f'<text x="{_num(x)}" y="{_num(y)}" text-anchor="{anchor}" '
                 f'font-size="{size}">{escape(s)}</text>')

    def line(self, x1, y1, x2, y2, color="#000000", width=1.0, dash: Optional[str] = None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
                 f'stroke="{color}" stroke-width="{width}"{d}/>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


# ---------------------------------------------------------------------------
# maps


def aggregate_cells(lon, lat, values, res: float):
    """Mean of finite values per display cell of size ``res`` degrees.

    Returns ``(cols, rows, means)`` sorted by (row, col).
    """
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    cols, rows = cell_indices(np.asarray(lon)[ok], np.asarray(lat)[ok], res)
    if cols.size == 0:
        return cols, rows, values[ok]
    keys = np.stack([rows, cols], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    sums = np.bincount(inv, weights=values[ok], minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    return uniq[:, 1], uniq[:, 0], sums / counts


def render_map(lon, lat, values, res: float, title: str, unit: str = "") -> str:
    """Choropleth of cell values; the color scale spans the displayed data range."""
    cols, rows, vals = aggregate_cells(lon, lat, values, res)
    width = MAP_PX + 2 * MARGIN + 90
    height = MAP_PX + 2 * MARGIN
    svg = _Svg(width, height, title)
    if vals.size == 0:
        svg.text(width / 2, height / 2, "no cells to display")
        return svg.render()
    c0, c1 = int(cols.min()), int(cols.max())
    r0, r1 = int(rows.min()), int(rows.max())
    span = max(c1 - c0 + 1, r1 - r0 + 1)
    px = MAP_PX / span
    vmin, vmax = float(vals.min()), float(vals.max())
    svg.add(f'<g id="cells" data-vmin="{_label(vmin)}" data-vmax="{_label(vmax)}">')
    for c, r, v in zip(cols.tolist(), rows.tolist(), vals.tolist()):
        x = MARGIN + (c - c0) * px
        y = MARGIN + (r1 - r) * px
        svg.add(f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(px)}" height="{_num(px)}" '
                f'fill="{color_for(v, vmin, vmax)}"/>')
    svg.add("</g>")
    # color bar
    bx = MARGIN + MAP_PX + 25
    nstep = 40
    for k in range(nstep):
        v = vmax - (vmax - vmin) * (k + 0.5) / nstep
        y = MARGIN + k * MAP_PX / nstep
        svg.add(f'<rect x="{bx}" y="{_num(y)}" width="16" height="{_num(MAP_PX / nstep + 0.5)}" '
                f'fill="{color_for(v, vmin, vmax)}"/>')
    svg.text(bx + 20, MARGIN + 8, _label(vmax), anchor="start")
    svg.text(bx + 20, MARGIN + MAP_PX, _label(vmin), anchor="start")
    if unit:
        svg.text(bx + 8, MARGIN - 8, unit)
    svg.text(MARGIN + MAP_PX / 2, height - 15,
             f"lon {_label((c0 + 0.5) * res)} to {_label((c1 + 0.5) * res)}, "
             f"{res:g} degree display cells")
    return svg.render()


MAP_LAYERS = (
    ("intensity", "x", "Treatment intensity (recipient households)", "households"),
    ("footprint", "y_footprint", "Building footprint", "m2"),
    ("tin_area", "y_tin", "Tin-roof area", "m2"),
    ("night", "y_night", "Night-light radiance", "nW/cm2/sr"),
)


def map_values(cells: CellTable, field: str, winsor_upper: Optional[float]) -> np.ndarray:
    """Values shown on a map: cells with eligible households, outcomes winsorized."""
    keep = cells.e > 0
    v = np.asarray(getattr(cells, field), dtype=float)[keep]
    if field != "x" and winsor_upper is not None and np.isfinite(v).any():
        v = winsorize(v, WinsorSpec(upper_pct=winsor_upper))
    return v


# ---------------------------------------------------------------------------
# charts


def _axis_range(lo: float, hi: float) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi <= lo:
        return lo - 1.0, hi + 1.0
    pad = 0.08 * (hi - lo)
    return lo - pad, hi + pad


def render_interval_chart(title: str, groups: Sequence[tuple[str, Sequence[tuple]]],
                          ylabel: str, reference: Optional[float] = 0.0) -> str:
    """Point estimates with 95% intervals.

    ``groups`` is a list of ``(panel_title, [(label, estimate, lo, hi), ...])``.
    """
    pw, ph = 220, 260
    width = MARGIN + len(groups) * (pw + 30) + 20
    height = ph + 2 * MARGIN + 20
    svg = _Svg(width, height, title)
    for gi, (gtitle, items) in enumerate(groups):
        x0 = MARGIN + gi * (pw + 30)
        vals = [v for _, e, lo, hi in items for v in (e, lo, hi) if v is not None
                and math.isfinite(v)]
        if reference is not None:
            vals.append(reference)
        lo_, hi_ = _axis_range(min(vals, default=0.0), max(vals, default=1.0))

        def ymap(v):
            return MARGIN + 20 + ph * (hi_ - v) / (hi_ - lo_)

        svg.text(x0 + pw / 2, MARGIN + 8, gtitle, size=12)
        svg.line(x0, MARGIN + 20, x0, MARGIN + 20 + ph)
        for v in (lo_, (lo_ + hi_) / 2, hi_):
            svg.text(x0 - 4, ymap(v) + 4, _label(v), anchor="end", size=9)
        if reference is not None:
            svg.line(x0, ymap(reference), x0 + pw, ymap(reference), "#888888", 1.0, "4 3")
        step = pw / max(len(items), 1)
        for k, (lab, e, lo, hi) in enumerate(items):
            cx = x0 + step * (k + 0.5)
            if e is None or not math.isfinite(e):
                svg.text(cx, MARGIN + 20 + ph + 14, f"{lab} (n/a)", size=9)
                continue
            col = SERIES[k % len(SERIES)] if lab != "survey" else "#000000"
            if lo is not None and hi is not None:
                svg.line(cx, ymap(lo), cx, ymap(hi), col, 2.0)
            svg.add(f'<circle cx="{_num(cx)}" cy="{_num(ymap(e))}" r="4" fill="{col}"/>')
            svg.text(cx, MARGIN + 20 + ph + 14, lab, size=10)
    svg.add(f'<text x="14" y="{_num(MARGIN + 20 + ph / 2)}" text-anchor="middle" '
            f'transform="rotate(-90 14 {_num(MARGIN + 20 + ph / 2)})">{escape(ylabel)}</text>')
    return svg.render()


def render_curves(title: str, panels: Sequence[tuple], xlabel: str) -> str:
    """LOESS curves with bands and the linear fit, one panel per proxy.

    ``panels`` holds ``(panel_title, W, fitted, lower, upper, linear)`` arrays.
    """
    pw, ph = 240, 220
    width = MARGIN + len(panels) * (pw + 40) + 10
    height = ph + 2 * MARGIN + 30
    svg = _Svg(width, height, title)
    for pi, (ptitle, W, fit, lo, hi, lin) in enumerate(panels):
        x0 = MARGIN + pi * (pw + 40)
        W = np.asarray(W, dtype=float)
        ys = np.concatenate([np.asarray(a, dtype=float) for a in (fit, lo, hi, lin)])
        ys = ys[np.isfinite(ys)]
        ylo, yhi = _axis_range(float(ys.min()) if ys.size else 0.0,
                               float(ys.max()) if ys.size else 1.0)
        xlo, xhi = _axis_range(float(W.min()) if W.size else 0.0,
                               float(W.max()) if W.size else 1.0)

        def pt(x, y):
            return (x0 + pw * (x - xlo) / (xhi - xlo), MARGIN + 20 + ph * (yhi - y) / (yhi - ylo))

        def path(xs, ys_):
            return " ".join(f"{_num(a)},{_num(b)}" for a, b in (pt(x, y) for x, y in zip(xs, ys_)))

        svg.text(x0 + pw / 2, MARGIN + 8, ptitle, size=12)
        svg.line(x0, MARGIN + 20 + ph, x0 + pw, MARGIN + 20 + ph)
        svg.line(x0, MARGIN + 20, x0, MARGIN + 20 + ph)
        for v in (ylo, yhi):
            svg.text(x0 - 4, pt(xlo, v)[1] + 4, _label(v), anchor="end", size=9)
        for v in (xlo, xhi):
            svg.text(pt(v, ylo)[0], MARGIN + 20 + ph + 14, _label(v), size=9)
        if W.size:
            band = path(W, hi) + " " + path(W[::-1], np.asarray(lo)[::-1])
            svg.add(f'<polygon points="{band}" fill="#1f4e79" fill-opacity="0.2" stroke="none"/>')
            svg.add(f'<polyline points="{path(W, fit)}" fill="none" stroke="#1f4e79" '
                    f'stroke-width="2"/>')
            svg.add(f'<polyline points="{path(W, lin)}" fill="none" stroke="#c0504d" '
                    f'stroke-width="1.5" stroke-dasharray="5 3"/>')
    svg.text(width / 2, height - 8, xlabel)
    return svg.render()


# ---------------------------------------------------------------------------
# driver


def _rows(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _fl(s: str) -> Optional[float]:
    return float(s) if s not in ("", None) else None


def write_reports(cfg: RunConfig) -> list[Path]:
    """Render every figure whose inputs exist in the run directory."""
    out = cfg.run_dir
    written = []
    cells_path = out / "cells.csv"
    if cells_path.is_file():
        cells = CellTable.from_csv(cells_path, cfg.grid_res)
        keep = cells.e > 0
        for name, field, title, unit in MAP_LAYERS:
            v = map_values(cells, field, cfg.outcome_winsor_upper)
            p = out / f"map_{name}.svg"
            p.write_text(render_map(cells.lon[keep], cells.lat[keep], v, cfg.report_res, title,
                                    unit))
            written.append(p)
    binned = _rows(out / "binned_effects.csv")
    if binned:
        groups = []
        for proxy in cfg.outcomes:
            items = [(r["bin"], _fl(r["coefficient"]), _fl(r["ci_lo"]), _fl(r["ci_hi"]))
                     for r in binned if r["outcome"] == proxy]
            if items:
                groups.append((proxy, items))
        p = out / "effects.svg"
        p.write_text(render_interval_chart("Effects by number of recipient households per cell",
                                           groups, "effect relative to 0 recipients"))
        written.append(p)
    loess = _rows(out / "loess.csv")
    if loess:
        panels = []
        for proxy in cfg.proxies:
            rs = [r for r in loess if r["proxy"] == proxy and r["welfare"] == cfg.scale_welfare]
            if rs:
                arr = {k: np.array([float(r[k]) for r in rs])
                       for k in ("W", "fitted", "lower", "upper", "linear")}
                panels.append((proxy, arr["W"], arr["fitted"], arr["lower"], arr["upper"],
                               arr["linear"]))
        p = out / "engel.svg"
        p.write_text(render_curves("Engel curves, control households (LOESS and linear fit)",
                                   panels, cfg.scale_welfare))
        written.append(p)
    scaled = _rows(out / "scaled_effects.csv")
    if scaled:
        items = [(r["proxy"], _fl(r["tau_w"]), _fl(r["ci_lo"]), _fl(r["ci_hi"])) for r in scaled]
        p = out / "scaled_effects.svg"
        p.write_text(render_interval_chart("Welfare effect of a transfer, by proxy",
                                           [(cfg.scale_welfare, items)], "welfare effect"))
        written.append(p)
    return written


__all__ = ["PALETTE", "aggregate_cells", "color_for", "map_values",
           "render_curves", "render_interval_chart", "render_map", "write_reports"]
