"""Parametric stroke glyphs and a line renderer.

Every letter is a set of pen strokes on a grid where the x-height is 1 and
the baseline is 0 (ascenders reach 1.6, descenders -0.6).  A
:class:`GlyphStyle` decides how strokes are inked: a round pen or a broad
nib, how many straight pieces approximate a bowl (few pieces give the
broken, angular look of blackletter), slant, serifs and proportions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image, ImageDraw

from .fonts import FontGroup

LINE_HEIGHT = 32
SUPERSAMPLE = 4


@dataclass(frozen=True)
class GlyphStyle:
    nib: str  # "round" or "broad"
    weight: float  # pen width in pixels (nib length for broad pens)
    nib_angle: float = 40.0  # degrees, broad pens only
    arc_steps: int = 12  # straight pieces per half turn
    shear: float = 0.0  # slant in degrees
    serif: float = 0.0  # serif half-length in x-height units
    width_scale: float = 1.0
    spacing: float = 0.16  # inter-letter gap in x-height units


STYLES: dict[FontGroup, GlyphStyle] = {
    FontGroup.ANTIQUA: GlyphStyle("round", 1.15, arc_steps=12, serif=0.16, width_scale=1.08, spacing=0.2),
    FontGroup.ITALIC: GlyphStyle("round", 0.95, arc_steps=10, shear=16.0, width_scale=0.82, spacing=0.12),
    FontGroup.FRAKTUR: GlyphStyle("broad", 2.5, nib_angle=40.0, arc_steps=3, width_scale=0.92, spacing=0.15),
    FontGroup.TEXTURA: GlyphStyle("broad", 3.1, nib_angle=45.0, arc_steps=2, width_scale=0.78, spacing=0.1),
    FontGroup.SCHWABACHER: GlyphStyle("broad", 2.6, nib_angle=30.0, arc_steps=5, width_scale=1.0, spacing=0.14),
    FontGroup.ROTUNDA: GlyphStyle("broad", 2.3, nib_angle=25.0, arc_steps=7, width_scale=1.12, spacing=0.16),
    FontGroup.BASTARDA: GlyphStyle("broad", 2.4, nib_angle=35.0, arc_steps=4, shear=9.0, width_scale=0.9, spacing=0.12),
    FontGroup.GOTICO_ANTIQUA: GlyphStyle("broad", 2.0, nib_angle=30.0, arc_steps=6, serif=0.1, spacing=0.16),
}


def _arc(cx, cy, rx, ry, a0, a1, steps_per_half):
    n = max(1, int(round(steps_per_half * abs(a1 - a0) / 180.0)))
    ts = np.radians(np.linspace(a0, a1, n + 1))
    return [(cx + rx * math.cos(t), cy + ry * math.sin(t)) for t in ts]


def _glyph(ch: str, k: int):
    """Advance width and stroke list of one character; ``k`` = arc pieces per half turn."""
    bowl = _arc(0.34, 0.5, 0.34, 0.5, 90, 450, k)
    if ch == " ":
        return 0.45, []
    if ch == "a":
        return 0.74, [_arc(0.32, 0.45, 0.31, 0.45, 60, 420, k), [(0.64, 1.0), (0.64, 0.0), (0.74, 0.06)]]
    if ch == "b":
        return 0.72, [[(0.0, 1.6), (0.0, 0.0)], _arc(0.34, 0.5, 0.34, 0.5, 180, 540, k)]
    if ch == "c":
        return 0.64, [_arc(0.34, 0.5, 0.34, 0.5, 45, 315, k)]
    if ch == "d":
        return 0.74, [bowl, [(0.68, 1.6), (0.68, 0.0)]]
    if ch == "e":
        return 0.7, [[(0.02, 0.5), (0.68, 0.5)] + _arc(0.34, 0.5, 0.34, 0.5, 0, 315, k)[1:]]
    if ch == "f":
        return 0.5, [_arc(0.42, 1.3, 0.2, 0.26, 20, 180, k)[::-1] + [(0.22, 0.0)], [(0.0, 1.0), (0.46, 1.0)]]
    if ch == "g":
        return 0.72, [
            _arc(0.32, 0.55, 0.3, 0.45, 90, 450, k),
            [(0.63, 1.0)] + _arc(0.32, -0.3, 0.31, 0.3, 0, -160, k),
        ]
    if ch == "h":
        return 0.72, [[(0.0, 1.6), (0.0, 0.0)], _arc(0.32, 0.6, 0.32, 0.4, 180, 0, k) + [(0.64, 0.0)]]
    if ch == "i":
        return 0.26, [[(0.0, 1.0), (0.0, 0.0)], [(0.0, 1.33), (0.0, 1.45)]]
    if ch == "j":
        return 0.36, [[(0.22, 1.0)] + _arc(0.02, -0.4, 0.2, 0.2, 0, -150, k), [(0.22, 1.33), (0.22, 1.45)]]
    if ch == "k":
        return 0.62, [[(0.0, 1.6), (0.0, 0.0)], [(0.56, 1.0), (0.0, 0.4)], [(0.18, 0.58), (0.6, 0.0)]]
    if ch == "l":
        return 0.26, [[(0.0, 1.6), (0.0, 0.0)]]
    if ch == "m":
        return 1.1, [
            [(0.0, 1.0), (0.0, 0.0)],
            _arc(0.26, 0.6, 0.26, 0.4, 180, 0, k) + [(0.52, 0.0)],
            _arc(0.78, 0.6, 0.26, 0.4, 180, 0, k) + [(1.04, 0.0)],
        ]
    if ch == "n":
        return 0.72, [[(0.0, 1.0), (0.0, 0.0)], _arc(0.32, 0.6, 0.32, 0.4, 180, 0, k) + [(0.64, 0.0)]]
    if ch == "o":
        return 0.72, [bowl]
    if ch == "p":
        return 0.72, [[(0.0, 1.0), (0.0, -0.6)], _arc(0.34, 0.5, 0.34, 0.5, 180, 540, k)]
    if ch == "q":
        return 0.74, [bowl, [(0.68, 1.0), (0.68, -0.6)]]
    if ch == "r":
        return 0.5, [[(0.0, 1.0), (0.0, 0.0)], _arc(0.3, 0.6, 0.3, 0.4, 180, 50, k)]
    if ch == "s":
        return 0.62, [_arc(0.3, 0.75, 0.28, 0.25, 30, 270, k) + _arc(0.3, 0.25, 0.28, 0.25, 90, -150, k)[1:]]
    if ch == "t":
        return 0.52, [[(0.16, 1.35)] + _arc(0.36, 0.2, 0.2, 0.2, 180, 300, k), [(0.0, 1.0), (0.46, 1.0)]]
    if ch == "u":
        return 0.72, [[(0.0, 1.0)] + _arc(0.32, 0.4, 0.32, 0.4, 180, 360, k), [(0.64, 1.0), (0.64, 0.0)]]
    if ch == "v":
        return 0.66, [[(0.0, 1.0), (0.32, 0.0), (0.64, 1.0)]]
    if ch == "w":
        return 1.0, [[(0.0, 1.0), (0.24, 0.0), (0.48, 0.85), (0.72, 0.0), (0.96, 1.0)]]
    if ch == "x":
        return 0.64, [[(0.0, 1.0), (0.62, 0.0)], [(0.62, 1.0), (0.0, 0.0)]]
    if ch == "y":
        return 0.66, [[(0.0, 1.0), (0.33, 0.0)], [(0.66, 1.0), (0.14, -0.6)]]
    if ch == "z":
        return 0.62, [[(0.0, 1.0), (0.6, 1.0), (0.0, 0.0), (0.6, 0.0)]]
    if ch == ".":
        return 0.26, [[(0.04, 0.0), (0.04, 0.1)]]
    if ch == ",":
        return 0.26, [[(0.06, 0.1), (0.06, 0.0), (-0.04, -0.3)]]
    if ch == "-":
        return 0.5, [[(0.0, 0.5), (0.4, 0.5)]]
    raise KeyError(ch)


RENDERABLE = frozenset("abcdefghijklmnopqrstuvwxyz .,-")

_SERIF_LEVELS = (0.0, 1.0, 1.6, -0.6)


def _serifs(strokes, length):
    out = []
    for stroke in strokes:
        if len(stroke) < 2:
            continue
        if math.dist(stroke[0], stroke[-1]) < 0.2 and len(stroke) == 2:
            continue
        for end, nxt in ((stroke[0], stroke[1]), (stroke[-1], stroke[-2])):
            vertical = abs(end[0] - nxt[0]) < 0.35 * abs(end[1] - nxt[1])
            if vertical and any(abs(end[1] - lvl) < 0.03 for lvl in _SERIF_LEVELS):
                out.append([(end[0] - length, end[1]), (end[0] + length, end[1])])
    return out


def book_cut(style: GlyphStyle, rng: np.random.Generator, amount: float = 1.0) -> GlyphStyle:
    """One printer's cut of a group style: weight, proportions, slant and nib jittered.

    ``amount`` scales every perturbation; 0 returns ``style`` unchanged.
    """
    if amount <= 0:
        return style
    u = rng.uniform(-1.0, 1.0, size=5) * amount
    return replace(
        style,
        weight=style.weight * math.exp(0.2 * u[0]),
        width_scale=style.width_scale * math.exp(0.08 * u[1]),
        shear=style.shear + 3.0 * u[2],
        spacing=max(0.04, style.spacing + 0.03 * u[3]),
        nib_angle=style.nib_angle + 8.0 * u[4],
    )


def advance(ch: str, style: GlyphStyle) -> float:
    """Horizontal advance of ``ch`` in x-height units."""
    w, _ = _glyph(ch, style.arc_steps)
    return w * style.width_scale + style.spacing


def _ink_stroke(draw: ImageDraw.ImageDraw, pts, style: GlyphStyle, scale: float):
    if style.nib == "round":
        width = max(1, int(round(style.weight * scale)))
        draw.line(pts, fill=255, width=width)
        r = width / 2
        for x, y in pts:
            draw.ellipse((x - r, y - r, x + r, y + r), fill=255)
        return
    half = style.weight * scale / 2
    a = math.radians(style.nib_angle)
    nx, ny = half * math.cos(a), -half * math.sin(a)
    for (x1, y1), (x2, y2) in zip(pts, pts[1:]):
        draw.polygon([(x1 - nx, y1 - ny), (x1 + nx, y1 + ny), (x2 + nx, y2 + ny), (x2 - nx, y2 - ny)], fill=255)
    hair = max(1, int(round(0.6 * scale)))
    draw.line(pts, fill=255, width=hair)


def render_runs(
    runs: list[tuple[str, GlyphStyle]],
    x_height: float = 9.5,
    baseline: float = 22.5,
    margin: int = 4,
    height: int = LINE_HEIGHT,
    tracking: float = 0.0,
    rise: np.ndarray | None = None,
):
    """Rasterise consecutive styled text runs onto one line.

    Returns ``(coverage, starts)``: ink coverage in [0, 1] of shape
    ``(height, W)`` and the pixel column at which each run begins (the
    first is always 0, margins belong to the adjacent run).  ``tracking``
    adds letter spacing, in x-height units, on top of each style's own.
    ``rise`` optionally shifts each character vertically (pixels, up).
    """
    ss = SUPERSAMPLE
    total = sum(advance(ch, st) + tracking for text, st in runs for ch in text) * x_height
    width = int(math.ceil(total)) + 2 * margin
    canvas = Image.new("L", (width * ss, height * ss), 0)
    draw = ImageDraw.Draw(canvas)
    cursor = float(margin)
    starts = []
    k = 0
    for r, (text, st) in enumerate(runs):
        starts.append(0 if r == 0 else int(round(cursor)))
        slant = math.tan(math.radians(st.shear))
        for ch in text:
            base = baseline - (float(rise[k]) if rise is not None else 0.0)
            k += 1
            w, strokes = _glyph(ch, st.arc_steps)
            if st.serif:
                strokes = strokes + _serifs(strokes, st.serif)
            for stroke in strokes:
                pts = [
                    (
                        (cursor + (x * st.width_scale + slant * (y - 0.5)) * x_height) * ss,
                        (base - y * x_height) * ss,
                    )
                    for x, y in stroke
                ]
                _ink_stroke(draw, pts, st, ss)
            cursor += (w * st.width_scale + st.spacing + tracking) * x_height
    cov = np.asarray(canvas, dtype=np.float32).reshape(height, ss, width, ss).mean(axis=(1, 3)) / 255.0
    return np.clip(cov, 0.0, 1.0), starts
