"""Synthetic multi-font-group books."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..ctc import min_input_length
from .fonts import FontGroup
from .glyphs import RENDERABLE, STYLES, GlyphStyle, book_cut, render_runs
from .samples import LineSample, Segment, to_uint8

DEFAULT_CHARSET = "abcdefghijklmnopqrstuvwxyz .,-"

_LEXICON = """
et in ad de cum non est sed quod qui quae ut per ex a pro sicut esse sunt enim autem
vero tamen etiam igitur ergo nam quia si nisi ita hoc haec illa ille ipse deus dominus
homo homines terra caelum aqua ignis liber libri verbum verba lex leges rex regis populus
urbs civitas ecclesia fides gratia pax bellum tempus tempora annus dies nox lux vita
mors anima corpus mens ratio natura causa modo magna magnus parva multa omnis omnia nulla
primum secundum tertium capitulum pars partes historia doctrina sapientia scientia opus
manus oculus cor spiritus sanctus beatus gloria virtus veritas iustitia misericordia
dicit dixit fecit facere habet habere videre venit scripsit legit audivit credit vocatur
nostra nostri vestra sua suis eius eorum quibus quorum inter contra super sub ante post
secundum propter apud sine usque adhuc semper numquam iterum simul statim deinde postea
""".split()


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the line generator (lengths in characters).

    Pairs are ranges.  ``noise``, ``blur`` and ``wear`` are drawn once per
    book (its paper, inking and worn type), ``cut_jitter`` scales how far
    each book's typeface cut strays from the group style, ``margin`` is the
    crop margin in pixels drawn per line and ``glyph_jitter`` the
    per-character baseline wobble in pixels.  ``specks`` is the expected
    number of dirt specks per 100 columns, and with probability
    ``clip_prob`` a line end is cut up to ``clip`` pixels into its outer
    glyph, as sloppy line segmentation does.
    """

    min_length: int = 1
    max_length: int = 80
    multi_group_fraction: float = 0.2
    x_height: tuple[float, float] = (12.0, 13.0)
    tracking: float = 0.2
    ink: tuple[float, float] = (0.8, 1.0)
    paper: tuple[float, float] = (0.9, 1.0)
    noise: float | tuple[float, float] = (0.05, 0.15)
    blur: tuple[float, float] = (0.2, 1.0)
    wear: tuple[float, float] = (0.0, 0.6)
    specks: float = 1.5
    clip_prob: float = 0.25
    clip: int = 3
    cut_jitter: float = 1.0
    margin: tuple[int, int] = (2, 6)
    glyph_jitter: float = 0.35


def _words(charset: str) -> list[str]:
    allowed = set(charset)
    words = [w for w in _LEXICON if set(w) <= allowed]
    if not words:
        letters = sorted(allowed - set(" .,-"))
        if not letters:
            letters = sorted(allowed - {" "}) or sorted(allowed)
        words = letters
    return words


def random_text(rng: np.random.Generator, length: int, charset: str) -> str:
    """Latin-like word salad of exactly ``length`` characters drawn from ``charset``."""
    words = _words(charset)
    punct = [p for p in ".,-" if p in charset]
    parts: list[str] = []
    size = 0
    while size < length + 1:
        w = words[rng.integers(len(words))]
        if punct and rng.random() < 0.12:
            w += punct[rng.integers(len(punct))]
        parts.append(w)
        size += len(w) + 1
    sep = " " if " " in charset else ""
    text = sep.join(parts)
    start = int(rng.integers(0, max(1, len(text) - length)))
    text = text[start : start + length].strip()
    while len(text) < length:
        text += words[rng.integers(len(words))][: length - len(text)]
    return text


def _span(v) -> tuple[float, float]:
    return (float(v), float(v)) if np.isscalar(v) else (float(v[0]), float(v[1]))


@dataclass(frozen=True)
class BookLook:
    """Per-book rendering state: a typeface cut per group plus paper, inking and wear."""

    styles: dict
    noise: float
    blur: float
    wear: float = 0.0

    @classmethod
    def draw(cls, rng: np.random.Generator, groups, cfg: SynthConfig) -> "BookLook":
        styles = {g: book_cut(STYLES[g], rng, cfg.cut_jitter) for g in groups}
        noise, blur, wear = (float(rng.uniform(*_span(v))) for v in (cfg.noise, cfg.blur, cfg.wear))
        return cls(styles, noise, blur, wear)


def _degrade(cov: np.ndarray, starts: list[int], rng: np.random.Generator, cfg: SynthConfig, look: BookLook):
    h, w = cov.shape
    if look.wear > 0:
        # worn type: smooth patches where strokes fade
        field = ndimage.gaussian_filter(rng.normal(size=(h, w)), 2.5)
        field = np.clip(field / (field.std() + 1e-12), 0.0, None)
        cov = cov * np.clip(1.0 - look.wear * field, 0.0, 1.0)
    n_specks = rng.poisson(cfg.specks * w / 100.0)
    if n_specks:
        dots = np.zeros_like(cov)
        dots[rng.integers(0, h, n_specks), rng.integers(0, w, n_specks)] = rng.uniform(0.5, 1.0, n_specks)
        cov = np.maximum(cov, np.clip(ndimage.gaussian_filter(dots, 0.7) * 4.0, 0.0, 1.0))
    ink_cols = np.flatnonzero(cov.max(axis=0) > 0.3)
    if ink_cols.size and cfg.clip > 0:
        lo, hi = 0, w
        if rng.random() < cfg.clip_prob:
            lo = int(ink_cols[0]) + int(rng.integers(1, cfg.clip + 1))
        if rng.random() < cfg.clip_prob:
            hi = int(ink_cols[-1]) + 1 - int(rng.integers(1, cfg.clip + 1))
        if hi - lo > w // 2:
            cov = cov[:, lo:hi]
            starts = [min(max(s - lo, 0), hi - lo) for s in starts]
    return cov, starts


def _line_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def render_line(
    runs: list[tuple[str, FontGroup]],
    rng: np.random.Generator,
    cfg: SynthConfig = SynthConfig(),
    book_id: str = "book",
    line_id: str = "line",
    x_height: float | None = None,
    look: BookLook | None = None,
) -> LineSample:
    """Render styled runs into a :class:`LineSample` with exact column labels.

    Without ``look`` the canonical group styles are used with the lower
    end of the noise range and no blur, wear, specks or clipping.
    """
    xh = float(x_height if x_height is not None else rng.uniform(*cfg.x_height))
    baseline = 22.5 + rng.uniform(-0.8, 0.8)
    styles: dict[FontGroup, GlyphStyle] = look.styles if look else STYLES
    n = sum(len(t) for t, _ in runs)
    rise = rng.uniform(-cfg.glyph_jitter, cfg.glyph_jitter, size=n) if cfg.glyph_jitter > 0 else None
    margin = int(rng.integers(cfg.margin[0], cfg.margin[1] + 1))
    cov, starts = render_runs(
        [(t, styles[g]) for t, g in runs], x_height=xh, baseline=baseline, tracking=cfg.tracking, margin=margin, rise=rise
    )
    blur = look.blur if look else 0.0
    if blur > 0:
        # ink spreading into the paper
        cov = np.clip(ndimage.gaussian_filter(cov, blur) * 1.15, 0.0, 1.0)
    if look is not None:
        cov, starts = _degrade(cov, starts, rng, cfg, look)
    transcript = "".join(t for t, _ in runs)
    # Pad the right margin until every alignment of the transcript fits.
    need = min_input_length(list(transcript))
    while (cov.shape[1] - 2) // 4 < need:
        cov = np.pad(cov, ((0, 0), (0, 4)))
    ink = rng.uniform(*cfg.ink)
    paper = rng.uniform(*cfg.paper)
    img = paper - cov * (paper - (1.0 - ink))
    noise = look.noise if look else _span(cfg.noise)[0]
    img = img + rng.normal(0.0, noise, size=img.shape)
    img = to_uint8(np.clip(img, 0.0, 1.0)).astype(np.float32) / 255.0
    width = img.shape[1]
    bounds = starts + [width]
    segments = [
        Segment(bounds[k], bounds[k + 1], FontGroup(g), text=t)
        for k, (t, g) in enumerate(runs)
        if bounds[k] < bounds[k + 1]
    ]
    return LineSample(image=img, transcript=transcript, segments=segments, book_id=book_id, line_id=line_id)


def generate_synthetic_book(
    style: FontGroup,
    n_lines: int,
    charset: str = DEFAULT_CHARSET,
    seed: int = 0,
    book_id: str | None = None,
    other_groups: tuple[FontGroup, ...] = (),
    cfg: SynthConfig = SynthConfig(),
) -> list[LineSample]:
    """Lines of one book printed mainly in ``style``.

    A fraction ``cfg.multi_group_fraction`` of lines (when ``other_groups``
    is non-empty) switches once to another group at a random character
    position, possibly mid-word.  Each line has its own RNG stream derived
    from ``(seed, line index)``.
    """
    if not charset:
        raise ValueError("charset must not be empty")
    unknown = set(charset) - RENDERABLE
    if unknown:
        raise ValueError(f"no glyphs for characters {sorted(unknown)}")
    style = FontGroup.parse(style)
    book_id = book_id or f"{style.label.lower()}-{seed}"
    others = [g for g in other_groups if g != style]
    book_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB00C]))
    book_xh = book_rng.uniform(*cfg.x_height)
    look = BookLook.draw(book_rng, [style, *others], cfg)
    lines = []
    for i in range(n_lines):
        rng = _line_seed(seed, i)
        length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        text = random_text(rng, length, charset)
        multi = others and len(text) >= 2 and rng.random() < cfg.multi_group_fraction
        if multi:
            other = others[rng.integers(len(others))]
            cut = int(rng.integers(1, len(text)))
            first, second = (style, other) if rng.random() < 0.5 else (other, style)
            runs = [(text[:cut], first), (text[cut:], second)]
        else:
            runs = [(text, style)]
        xh = book_xh + rng.uniform(-0.25, 0.25)
        lines.append(render_line(runs, rng, cfg, book_id=book_id, line_id=f"{i:05d}", x_height=xh, look=look))
    return lines
