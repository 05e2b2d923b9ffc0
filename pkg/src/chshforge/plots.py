"""Self-contained SVG figures (no plotting dependency)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

SERIES_COLORS = {"unitary": "#1f77b4", "dynamic": "#d62728", "postprocessed": "#2ca02c"}
_FALLBACK = ("#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
TSIRELSON = 2 * math.sqrt(2)


def _color(name, i):
    return SERIES_COLORS.get(name, _FALLBACK[i % len(_FALLBACK)])


class _Frame:
    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def x(self, v):
        a, b = self.xlim
        return self.x0 + (v - a) / (b - a) * self.w

    def y(self, v):
        a, b = self.ylim
        return self.y0 + self.h - (v - a) / (b - a) * self.h


def _text(x, y, s, size=12, anchor="middle", extra=""):
    return f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif"{extra}>{escape(str(s))}</text>'


def _axes(f: _Frame, xticks, yticks, xlabel, ylabel, title):
    out = [f'<rect x="{f.x0}" y="{f.y0}" width="{f.w}" height="{f.h}" fill="none" stroke="black"/>']
    for t in xticks:
        x = f.x(t)
        out.append(f'<line x1="{x:.1f}" y1="{f.y0 + f.h}" x2="{x:.1f}" y2="{f.y0 + f.h + 5}" stroke="black"/>')
        out.append(_text(x, f.y0 + f.h + 18, _fmt(t), 11))
    for t in yticks:
        y = f.y(t)
        out.append(f'<line x1="{f.x0 - 5}" y1="{y:.1f}" x2="{f.x0}" y2="{y:.1f}" stroke="black"/>')
        out.append(_text(f.x0 - 8, y + 4, _fmt(t), 11, "end"))
    out.append(_text(f.x0 + f.w / 2, f.y0 + f.h + 38, xlabel, 13))
    cy = f.y0 + f.h / 2
    out.append(_text(f.x0 - 42, cy, ylabel, 13, extra=f' transform="rotate(-90 {f.x0 - 42:.1f} {cy:.1f})"'))
    out.append(_text(f.x0 + f.w / 2, f.y0 - 10, title, 14))
    return out


def _fmt(v):
    return f"{v:g}" if abs(v - round(v)) > 1e-9 else str(int(round(v)))


def _document(width, height, body):
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _legend(x, y, names):
    out = []
    for i, name in enumerate(names):
        yy = y + 18 * i
        out.append(f'<line x1="{x}" y1="{yy}" x2="{x + 20}" y2="{yy}" stroke="{_color(name, i)}" stroke-width="2"/>')
        out.append(_text(x + 26, yy + 4, name, 11, "start"))
    return out


def max_s_plot(series: dict, title: str = "max|S| versus chain length") -> str:
    """``series[name] = [(length, mean, std), ...]``; |S| axis fixed to [0, 3]."""
    lengths = sorted({n for pts in series.values() for n, _, _ in pts}) or [2, 3]
    lo, hi = min(lengths) - 0.5, max(lengths) + 0.5
    f = _Frame(70, 40, 560, 340, (lo, hi), (0.0, 3.0))
    body = []
    # classical bound and the quantum band up to the Tsirelson value
    body.append(
        f'<rect x="{f.x0}" y="{f.y(TSIRELSON):.1f}" width="{f.w}" height="{f.y(2.0) - f.y(TSIRELSON):.1f}" '
        'fill="#fff2cc" stroke="none"/>'
    )
    body.append(_text(f.x0 + f.w - 6, f.y(TSIRELSON) + 16, "Quantum Domain", 12, "end"))
    body.append(f'<line x1="{f.x0}" y1="{f.y(2.0):.1f}" x2="{f.x0 + f.w}" y2="{f.y(2.0):.1f}" stroke="black" stroke-dasharray="6 4"/>')
    body += _axes(f, lengths, [0, 0.5, 1, 1.5, 2, 2.5, 3], "chain length (qubits)", "max |S|", title)
    for i, (name, pts) in enumerate(series.items()):
        col = _color(name, i)
        pts = sorted(pts)
        path = " ".join(f"{'M' if j == 0 else 'L'}{f.x(n):.1f},{f.y(min(m, 3.0)):.1f}" for j, (n, m, _) in enumerate(pts))
        body.append(f'<path d="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
        for n, m, s in pts:
            x = f.x(n)
            a, b = f.y(max(m - s, 0.0)), f.y(min(m + s, 3.0))
            body.append(f'<line x1="{x:.1f}" y1="{a:.1f}" x2="{x:.1f}" y2="{b:.1f}" stroke="{col}"/>')
            body.append(f'<circle cx="{x:.1f}" cy="{f.y(min(m, 3.0)):.1f}" r="3" fill="{col}"/>')
    body += _legend(f.x0 + 12, f.y0 + 16, list(series))
    return _document(700, 440, body)


def scurve_plot(panels: dict, title: str = "S(phi)") -> str:
    """``panels[label] = {series name: (phases, s_values)}``; one panel per label."""
    labels = list(panels)
    width, ph = 700, 300
    height = 40 + ph * max(len(labels), 1)
    body = []
    for p, label in enumerate(labels):
        curves = panels[label]
        xs = [x for ph_, _ in curves.values() for x in ph_] or [0.0, 1.0]
        f = _Frame(70, 40 + p * ph, 560, ph - 90, (min(xs), max(xs)), (-3.0, 3.0))
        body.append(f'<rect x="{f.x0}" y="{f.y(TSIRELSON):.1f}" width="{f.w}" height="{f.y(2.0) - f.y(TSIRELSON):.1f}" fill="#fff2cc"/>')
        body.append(f'<rect x="{f.x0}" y="{f.y(-2.0):.1f}" width="{f.w}" height="{f.y(-TSIRELSON) - f.y(-2.0):.1f}" fill="#fff2cc"/>')
        for lvl in (2.0, -2.0):
            body.append(f'<line x1="{f.x0}" y1="{f.y(lvl):.1f}" x2="{f.x0 + f.w}" y2="{f.y(lvl):.1f}" stroke="black" stroke-dasharray="6 4"/>')
        ticks = [k * math.pi / 2 for k in range(math.ceil(min(xs) / (math.pi / 2)), math.floor(max(xs) / (math.pi / 2)) + 1)]
        body += _axes(f, [], [-3, -2, -1, 0, 1, 2, 3], "phi (rad)", "S", f"{title}: {label}")
        for t in ticks:
            x = f.x(t)
            body.append(f'<line x1="{x:.1f}" y1="{f.y0 + f.h}" x2="{x:.1f}" y2="{f.y0 + f.h + 5}" stroke="black"/>')
            body.append(_text(x, f.y0 + f.h + 18, f"{t / math.pi:g}pi", 11))
        for i, (name, (phases, s)) in enumerate(curves.items()):
            col = _color(name, i)
            pts = [(x, v) for x, v in zip(phases, s) if not math.isnan(v)]
            path = " ".join(f"{'M' if j == 0 else 'L'}{f.x(x):.1f},{f.y(max(-3.0, min(3.0, v))):.1f}" for j, (x, v) in enumerate(pts))
            if path:
                body.append(f'<path d="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
        body += _legend(f.x0 + 12, f.y0 + 16, list(curves))
    return _document(width, height, body)
