"""Minimal deterministic SVG charts: overlaid histograms and mean/std curves."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=70, right=30, top=40, bottom=60)
COLORS = ("#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if abs(x) < 1e6 else f"{x:.3g}"


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    raw = (hi - lo) / count
    step = 10 ** np.floor(np.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= step * mult:
            step *= mult
            break
    start = np.ceil(lo / step) * step
    return [float(round(v, 12)) for v in np.arange(start, hi + step * 1e-9, step)]


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        (x0, x1), (y0, y1) = xlim, ylim
        if not (x1 > x0 and y1 > y0):
            raise InvalidArgumentError("degenerate plot range")
        self.xlim, self.ylim = (x0, x1), (y0, y1)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{_esc(title)}</text>',
        ]
        self._axes(xlabel, ylabel)

    def sx(self, x):
        x0, x1 = self.xlim
        return MARGIN["left"] + (x - x0) / (x1 - x0) * (WIDTH - MARGIN["left"] - MARGIN["right"])

    def sy(self, y):
        y0, y1 = self.ylim
        return HEIGHT - MARGIN["bottom"] - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN["top"] - MARGIN["bottom"])

    def _axes(self, xlabel, ylabel):
        left, bottom = MARGIN["left"], HEIGHT - MARGIN["bottom"]
        right, top = WIDTH - MARGIN["right"], MARGIN["top"]
        p = self.parts
        p.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>')
        for t in _ticks(*self.xlim):
            x = self.sx(t)
            p.append(f'<line x1="{x:.1f}" y1="{bottom}" x2="{x:.1f}" y2="{bottom + 5}" stroke="black"/>')
            p.append(f'<text x="{x:.1f}" y="{bottom + 18}" text-anchor="middle">{_fmt(t)}</text>')
        for t in _ticks(*self.ylim):
            y = self.sy(t)
            p.append(f'<line x1="{left - 5}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
            p.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
        p.append(f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 18}" text-anchor="middle">{_esc(xlabel)}</text>')
        p.append(
            f'<text x="18" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})">{_esc(ylabel)}</text>'
        )

    def vline(self, x, label):
        xs = self.sx(x)
        self.parts.append(
            f'<line x1="{xs:.1f}" y1="{MARGIN["top"]}" x2="{xs:.1f}" y2="{HEIGHT - MARGIN["bottom"]}" '
            f'stroke="black" stroke-dasharray="6,4"/>'
        )
        self.parts.append(f'<text x="{xs + 4:.1f}" y="{MARGIN["top"] + 14}">{_esc(label)}</text>')

    def hline(self, y, label):
        ys = self.sy(y)
        self.parts.append(
            f'<line x1="{MARGIN["left"]}" y1="{ys:.1f}" x2="{WIDTH - MARGIN["right"]}" y2="{ys:.1f}" '
            f'stroke="black" stroke-dasharray="6,4"/>'
        )
        self.parts.append(f'<text x="{WIDTH - MARGIN["right"] - 4}" y="{ys - 4:.1f}" text-anchor="end">{_esc(label)}</text>')

    def legend(self, labels):
        for k, lab in enumerate(labels):
            y = MARGIN["top"] + 14 + 18 * k
            x = WIDTH - MARGIN["right"] - 180
            self.parts.append(f'<rect x="{x}" y="{y - 9}" width="12" height="12" fill="{COLORS[k % len(COLORS)]}"/>')
            self.parts.append(f'<text x="{x + 18}" y="{y + 1}">{_esc(lab)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _pad(lo, hi, frac=0.05):
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    d = (hi - lo) * frac
    return lo - d, hi + d


def histogram_svg(
    series: Sequence[tuple], truth: Optional[float] = None, bins: int = 20, title: str = "", xlabel: str = "value"
) -> str:
    """Overlay at most two histograms ``(label, values)`` sharing one set of bins."""
    if not series or len(series) > 2:
        raise InvalidArgumentError("histogram takes one or two series")
    arrays = [np.asarray(v, dtype=float) for _, v in series]
    if any(a.size == 0 for a in arrays):
        raise InvalidArgumentError("empty value list")
    allv = np.concatenate(arrays + ([np.array([truth])] if truth is not None else []))
    lo, hi = _pad(float(allv.min()), float(allv.max()), 0.02)
    edges = np.linspace(lo, hi, bins + 1)
    hists = [np.histogram(a, bins=edges)[0] for a in arrays]
    top = max(int(h.max()) for h in hists)
    c = _Canvas((lo, hi), (0.0, top * 1.1 + 1e-9), title, xlabel, "count")
    for k, hist in enumerate(hists):
        color = COLORS[k]
        for j, cnt in enumerate(hist):
            if cnt == 0:
                continue
            x0, x1 = c.sx(edges[j]), c.sx(edges[j + 1])
            y = c.sy(cnt)
            c.parts.append(
                f'<rect x="{x0:.1f}" y="{y:.1f}" width="{x1 - x0:.1f}" height="{c.sy(0) - y:.1f}" '
                f'fill="{color}" fill-opacity="0.45" stroke="{color}"/>'
            )
    if truth is not None:
        c.vline(truth, f"truth {_fmt(truth)}")
    c.legend([lab for lab, _ in series])
    return c.render()


def curve_svg(
    series: Sequence[tuple], guide: Optional[float] = None, title: str = "", xlabel: str = "x", ylabel: str = "value"
) -> str:
    """Lines ``(label, xs, means, stds_or_None)`` with optional error bars and a horizontal guide."""
    if not series:
        raise InvalidArgumentError("curve needs at least one series")
    xs_all, ys_all = [], []
    for _, xs, ys, err in series:
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        if xs.size == 0 or xs.shape != ys.shape:
            raise InvalidArgumentError("empty or mismatched curve data")
        e = np.zeros_like(ys) if err is None else np.asarray(err, float)
        xs_all.append(xs)
        ys_all.extend([ys - e, ys + e])
    if guide is not None:
        ys_all.append(np.array([guide]))
    xlo, xhi = _pad(float(np.min(np.concatenate(xs_all))), float(np.max(np.concatenate(xs_all))))
    ylo, yhi = _pad(float(np.min(np.concatenate(ys_all))), float(np.max(np.concatenate(ys_all))))
    c = _Canvas((xlo, xhi), (ylo, yhi), title, xlabel, ylabel)
    for k, (_, xs, ys, err) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{c.sx(x):.1f},{c.sy(y):.1f}" for x, y in zip(xs, ys))
        c.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for j, (x, y) in enumerate(zip(xs, ys)):
            c.parts.append(f'<circle cx="{c.sx(x):.1f}" cy="{c.sy(y):.1f}" r="3" fill="{color}"/>')
            if err is not None:
                e = float(err[j])
                c.parts.append(
                    f'<line x1="{c.sx(x):.1f}" y1="{c.sy(y - e):.1f}" x2="{c.sx(x):.1f}" y2="{c.sy(y + e):.1f}" stroke="{color}"/>'
                )
    if guide is not None:
        c.hline(guide, _fmt(guide))
    c.legend([s[0] for s in series])
    return c.render()
