"""Hand-written SVG line charts for sweep reports.

Each series is a ``<polyline>`` tagged with ``data-series`` and
``data-panel`` attributes so tests can find the curves by parsing the XML.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
PANEL_W, PANEL_H = 360, 260
MARGIN = dict(left=56, right=16, top=36, bottom=48)
LEGEND_H = 18


def _num(v):
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _finite(v):
    return v is not None and isinstance(v, (int, float)) and math.isfinite(v)


def line_chart(title, panels, y_label, y_range=(0.0, 1.0), panel_width=PANEL_W):
    """Render side-by-side panels sharing a y axis range.

    ``panels`` is a list of dicts with ``name``, ``x_label``, ``x_ticks``
    (list of ``(value, label)``) and ``series`` (list of dicts with ``name``,
    ``points`` [(x, y)], optional ``dashed``). Points with a missing or
    non-finite y are left out of the polyline.
    """
    names = list(dict.fromkeys(s["name"] for p in panels for s in p["series"]))
    colour = {n: PALETTE[i % len(PALETTE)] for i, n in enumerate(names)}
    legend_rows = len(names)
    width = len(panels) * panel_width
    height = PANEL_H + 24 + legend_rows * LEGEND_H + 8
    y0, y1 = y_range
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<title>{escape(title)}</title>',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for pi, panel in enumerate(panels):
        ox = pi * panel_width
        left, top = ox + MARGIN["left"], MARGIN["top"]
        w = panel_width - MARGIN["left"] - MARGIN["right"]
        h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
        xs = [x for x, _ in panel["x_ticks"]]
        xmin, xmax = min(xs), max(xs)
        span = (xmax - xmin) or 1.0

        def px(x):
            return left + (x - xmin) / span * w

        def py(y):
            return top + h - (min(max(y, y0), y1) - y0) / ((y1 - y0) or 1.0) * h

        out.append(f'<g class="panel" data-panel="{escape(panel["name"])}">')
        out.append(f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#333"/>')
        for k in range(6):
            yv = y0 + (y1 - y0) * k / 5
            yy = py(yv)
            out.append(f'<line x1="{left}" y1="{yy:.1f}" x2="{left + w}" y2="{yy:.1f}" stroke="#ddd"/>')
            out.append(f'<text x="{left - 4}" y="{yy + 4:.1f}" text-anchor="end">{_num(yv)}</text>')
        for xv, label in panel["x_ticks"]:
            xx = px(xv)
            out.append(f'<line x1="{xx:.1f}" y1="{top + h}" x2="{xx:.1f}" y2="{top + h + 4}" stroke="#333"/>')
            out.append(f'<text x="{xx:.1f}" y="{top + h + 16}" text-anchor="middle">{escape(str(label))}</text>')
        out.append(f'<text x="{left + w / 2:.1f}" y="{top + h + 34}" text-anchor="middle">'
                   f'{escape(panel["x_label"])}</text>')
        out.append(f'<text x="{ox + 14}" y="{top + h / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 {ox + 14} {top + h / 2:.1f})">{escape(y_label)}</text>')
        out.append(f'<text x="{left + w / 2:.1f}" y="{top - 6}" text-anchor="middle">{escape(panel["name"])}</text>')
        for s in panel["series"]:
            pts = [(px(x), py(y)) for x, y in s["points"] if _finite(y)]
            if not pts:
                continue
            dash = ' stroke-dasharray="5,3"' if s.get("dashed") else ""
            coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            out.append(f'<polyline class="series" data-series="{escape(s["name"])}" '
                       f'data-panel="{escape(panel["name"])}" fill="none" stroke="{colour[s["name"]]}" '
                       f'stroke-width="1.8"{dash} points="{coords}"/>')
            for x, y in pts:
                out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.5" fill="{colour[s["name"]]}"/>')
        out.append("</g>")
    ly = PANEL_H + 20
    for i, n in enumerate(names):
        yy = ly + i * LEGEND_H
        out.append(f'<line x1="{MARGIN["left"]}" y1="{yy}" x2="{MARGIN["left"] + 24}" y2="{yy}" '
                   f'stroke="{colour[n]}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN["left"] + 30}" y="{yy + 4}">{escape(n)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _filters_of(report, kind):
    return [(label, c["param"]) for label, c in report.clean.items() if c["kind"] == kind]


def top5_chart(report):
    """Top-5 accuracy against LAP size and LAR radius, clean and per attack (TM2)."""
    panels = []
    for kind, name, x_label in (("lap", "LAP", "np (pixels averaged)"), ("lar", "LAR", "r (radius)")):
        configs = _filters_of(report, kind)
        if not configs:
            continue
        series = [{"name": "clean", "points": [(p, report.clean[l]["top5_acc"]) for l, p in configs]}]
        for atk in report.attacks:
            series.append({"name": f"{atk} (TM2)", "dashed": True,
                           "points": [(p, report.mean_metric(atk, l, "TM2", "top5_acc")) for l, p in configs]})
        panels.append({"name": name, "x_label": x_label,
                       "x_ticks": [(p, p) for _, p in configs], "series": series})
    if not panels:
        raise ValueError("report has no LAP or LAR filter to plot")
    return line_chart("Top-5 accuracy vs filter strength", panels, "top-5 accuracy")


def success_chart(report):
    """Targeted success per attack for every filter in the sweep."""
    labels = report.filters
    series = []
    tms = [tm for tm in report.metadata.get("threat_models", ["TM1", "TM2"]) if tm != "TM3"]
    for atk in report.attacks:
        for tm in tms:
            series.append({"name": f"{atk} ({tm})", "dashed": tm == "TM1",
                           "points": [(i, report.mean_metric(atk, l, tm, "success_rate"))
                                      for i, l in enumerate(labels)]})
    panel = {"name": "all filters", "x_label": "filter", "series": series,
             "x_ticks": [(i, l.replace("identity", "id").replace("_", " ")) for i, l in enumerate(labels)]}
    # one wide panel so eleven tick labels fit
    return line_chart("Targeted attack success per filter", [panel], "success rate", panel_width=2 * PANEL_W)


def write_plots(report, out_dir):
    """Write the charts that apply to ``report``; the top-5 chart needs a LAP or LAR filter."""
    out = Path(out_dir)
    paths = {}
    charts = [("success_vs_filter.svg", success_chart)]
    if any(c["kind"] in ("lap", "lar") for c in report.clean.values()):
        charts.insert(0, ("top5_vs_filter.svg", top5_chart))
    for name, fn in charts:
        path = out / name
        tmp = path.with_suffix(".svg.tmp")
        tmp.write_text(fn(report), encoding="utf-8")
        tmp.replace(path)
        paths[name] = path
    return paths
