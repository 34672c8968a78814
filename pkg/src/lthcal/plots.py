"""Dependency-free SVG line charts of ledger metrics against remaining weights."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .errors import DataError
from .harness import RunLedger, read_csv
from .io import atomic_write_text

METRICS = {
    "accuracy": "Accuracy",
    "ece": "ECE",
    "nll": "NLL (mean per sample)",
    "brier": "Brier score",
}
_COLUMN = {"accuracy": "accuracy", "ece": "ece", "nll": "nll_mean", "brier": "brier"}

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]

WIDTH, HEIGHT = 720, 440
LEFT, RIGHT, TOP, BOTTOM = 80, 190, 50, 70


def _series(ledgers: Sequence[RunLedger], column: str) -> dict[str, list[tuple[float, float]]]:
    """Per strategy, metric averaged over ledgers (seeds) at each iteration."""
    modes = {r.reinit_mode for lg in ledgers for r in lg.rows}
    acc: dict[str, dict[int, list[tuple[float, float]]]] = defaultdict(lambda: defaultdict(list))
    for lg in ledgers:
        for r in lg.rows:
            name = r.strategy if len(modes) == 1 else f"{r.strategy} ({r.reinit_mode})"
            acc[name][r.iteration].append((r.remaining_weights_pct, getattr(r, column)))
    out = {}
    for name, by_iter in acc.items():
        pts = []
        for it in sorted(by_iter):
            vals = by_iter[it]
            pts.append((sum(v[0] for v in vals) / len(vals), sum(v[1] for v in vals) / len(vals)))
        out[name] = pts
    return out


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12:
        ticks.append(round(t, 12))
        t += step
    return ticks


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, y_label: str) -> str:
    """Log-scaled x axis of remaining weights (%), decreasing to the right."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        raise DataError("nothing to plot")
    x_hi = math.log10(max(xs))
    x_lo = math.log10(min(xs))
    if x_hi - x_lo < 1e-9:
        x_lo -= 0.5
    y_lo, y_hi = min(ys), max(ys)
    pad = (y_hi - y_lo) * 0.08 or max(abs(y_hi) * 0.05, 0.01)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x_hi - math.log10(x)) / (x_hi - x_lo) * pw

    def py(y):
        return TOP + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="28" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _nice_ticks(y_lo, y_hi):
        y = py(t)
        out.append(f'<line x1="{LEFT}" y1="{y:.2f}" x2="{LEFT + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(
            f'<text x="{LEFT - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{t:g}</text>'
        )
    for x in sorted(set(round(v, 1) for v in xs), reverse=True):
        X = px(x)
        out.append(f'<line x1="{X:.2f}" y1="{TOP + ph}" x2="{X:.2f}" y2="{TOP + ph + 5}" stroke="#444"/>')
        out.append(
            f'<text x="{X:.2f}" y="{TOP + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{x:g}</text>'
        )
    out.append(
        f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 20}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">Remaining weights (%)</text>'
    )
    out.append(
        f'<text x="20" y="{TOP + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 20 {TOP + ph / 2:.1f})">{escape(y_label)}</text>'
    )
    for k, (name, pts) in enumerate(sorted(series.items())):
        color = COLORS[k % len(COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        ly = TOP + 10 + 20 * k
        lx = LEFT + pw + 15
        out.append(f'<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(name)}</text></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(ledger_paths: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    """Write accuracy.svg, ece.svg, nll.svg and brier.svg for one or more ledgers."""
    if not ledger_paths:
        raise DataError("need at least one ledger")
    ledgers = [read_csv(p) for p in ledger_paths]
    if not any(lg.rows for lg in ledgers):
        raise DataError("ledgers contain no rows")
    out_dir = Path(out_dir)
    written = []
    for key, label in METRICS.items():
        svg = line_chart(_series(ledgers, _COLUMN[key]), f"{label} vs. remaining weights", label)
        path = out_dir / f"{key}.svg"
        atomic_write_text(path, svg)
        written.append(path)
    return written
