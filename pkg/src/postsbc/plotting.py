"""Hand-written SVG rendering of PIT-ECDF-difference plots.

Output is a pure function of the inputs: coordinates are printed with fixed
precision and no timestamps or random ids are embedded.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .sbc import RankEnsemble
from .uniformity import EcdfDiffCurve, Envelope, band_check, pit_ecdf_diff

WIDTH, HEIGHT = 520, 360
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55


def _step_points(grid: np.ndarray, values: np.ndarray) -> list[tuple[float, float]]:
    """Sawtooth path of ECDF(u) - u: the ECDF is flat between grid points."""
    pts = [(0.0, 0.0)]
    prev_f = 0.0
    for u, v in zip(grid, values):
        pts.append((float(u), prev_f - float(u)))
        pts.append((float(u), float(v)))
        prev_f = v + u
    return pts


def pit_points(pit_values) -> list[tuple[float, float]]:
    """Exact ECDF-difference path for continuous PIT values."""
    u = np.sort(np.asarray(pit_values, dtype=float))
    n = len(u)
    pts = [(0.0, 0.0)]
    for i, x in enumerate(u):
        pts.append((float(x), i / n - float(x)))
        pts.append((float(x), (i + 1) / n - float(x)))
    pts.append((1.0, 0.0))
    return pts


def _nice_limit(values: np.ndarray) -> float:
    m = float(np.max(np.abs(values))) if len(values) else 0.0
    for lim in (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0):
        if m <= lim * 0.95:
            return lim
    return 1.0


class _Canvas:
    def __init__(self, ylim: float):
        self.ylim = ylim
        self.w = WIDTH - LEFT - RIGHT
        self.h = HEIGHT - TOP - BOTTOM
        self.parts: list[str] = []

    def x(self, u: float) -> float:
        return LEFT + u * self.w

    def y(self, v: float) -> float:
        return TOP + (self.ylim - v) / (2 * self.ylim) * self.h

    def path(self, pts) -> str:
        return " ".join(f"{self.x(u):.2f},{self.y(v):.2f}" for u, v in pts)

    def add(self, s: str) -> None:
        self.parts.append(s)


def render_svg(
    points: list[tuple[float, float]],
    title: str,
    envelope: Envelope | None = None,
    annotation: str = "",
) -> str:
    values = np.array([v for _, v in points])
    extra = np.concatenate([envelope.lower, envelope.upper]) if envelope is not None else np.zeros(0)
    c = _Canvas(_nice_limit(np.concatenate([values, extra])))
    c.add(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">'
    )
    c.add(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    c.add(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    if envelope is not None:
        upper = [(0.0, 0.0)] + list(zip(envelope.grid.tolist(), envelope.upper.tolist()))
        lower = [(0.0, 0.0)] + list(zip(envelope.grid.tolist(), envelope.lower.tolist()))
        band = c.path(upper + lower[::-1])
        c.add(f'<polygon class="band" points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>')
    # axes and ticks
    x0, x1 = c.x(0), c.x(1)
    y0, y1 = c.y(-c.ylim), c.y(c.ylim)
    c.add(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" height="{y0 - y1:.2f}" fill="none" stroke="black"/>')
    c.add(f'<line x1="{x0:.2f}" y1="{c.y(0):.2f}" x2="{x1:.2f}" y2="{c.y(0):.2f}" stroke="#888" stroke-dasharray="4 3"/>')
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        c.add(f'<line x1="{c.x(t):.2f}" y1="{y0:.2f}" x2="{c.x(t):.2f}" y2="{y0 + 5:.2f}" stroke="black"/>')
        c.add(f'<text x="{c.x(t):.2f}" y="{y0 + 18:.2f}" text-anchor="middle">{t:g}</text>')
    for t in np.linspace(-c.ylim, c.ylim, 5):
        c.add(f'<line x1="{x0 - 5:.2f}" y1="{c.y(t):.2f}" x2="{x0:.2f}" y2="{c.y(t):.2f}" stroke="black"/>')
        c.add(f'<text x="{x0 - 8:.2f}" y="{c.y(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    c.add(f'<text x="{(x0 + x1) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">PIT</text>')
    c.add(
        f'<text x="16" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.2f})">ECDF difference</text>'
    )
    c.add(f'<polyline class="curve" points="{c.path(points)}" fill="none" stroke="#08306b" stroke-width="1.5"/>')
    if annotation:
        c.add(f'<text x="{x1 - 6:.2f}" y="{y1 + 16:.2f}" text-anchor="end">{escape(annotation)}</text>')
    c.add("</svg>")
    return "\n".join(c.parts) + "\n"


def render_curve(curve: EcdfDiffCurve, envelope: Envelope | None, title: str) -> str:
    if envelope is not None and (envelope.N != curve.N or len(envelope.grid) != len(curve.grid)):
        raise ValueError("curve and envelope were built for different (N, S)")
    note = f"N = {curve.N}" + (f", S = {curve.S}" if curve.S is not None else "")
    if envelope is not None:
        note += f", {band_check(curve, envelope).label}"
    return render_svg(_step_points(curve.grid, curve.values), title, envelope, note)


def render_plot(ensemble: RankEnsemble, envelope: Envelope, quantity: str) -> str:
    """PIT-ECDF-difference plot of one quantity with its simultaneous band."""
    ranks = ensemble.ranks(quantity)
    if ensemble.S != envelope.S or len(ranks) != envelope.N:
        raise ValueError(
            f"ensemble (N={len(ranks)}, S={ensemble.S}) does not match envelope (N={envelope.N}, S={envelope.S})"
        )
    return render_curve(pit_ecdf_diff(ranks, ensemble.S), envelope, quantity)
