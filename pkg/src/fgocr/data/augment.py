"""Preprocessing and image augmentation.

Offline augmentations (stored alongside the originals): smooth random
warping, grayscale erosion or dilation with a 2x2 square, Gaussian blur or
unsharp masking.  Runtime augmentations (drawn again every epoch): shear,
contrast and brightness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .glyphs import LINE_HEIGHT
from .samples import LineSample, Segment, segments_from_labels, to_uint8

MIN_WIDTH = 6

WARP_SIGMA = 5.0
WARP_MAXDELTA = 4.0
MORPH_SIZE = (2, 2)
FILTER_VARIANCE = (1.0, 1.25)


class UnusableSample(ValueError):
    """Raised when a line is too narrow for the recognizers after resizing."""


def _resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = image.shape
    # Pixel-centre aligned sampling grid.
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndi.map_coordinates(image.astype(np.float64), [yy, xx], order=1, mode="nearest")


def resample_labels(labels: np.ndarray, width: int) -> np.ndarray:
    """Nearest-neighbour resampling of per-column class labels (never interpolated)."""
    labels = np.asarray(labels)
    src = ((2 * np.arange(width) + 1) * len(labels)) // (2 * width)
    return labels[np.minimum(src, len(labels) - 1)]


def preprocess(sample: LineSample, height: int = LINE_HEIGHT) -> LineSample:
    """Resize to ``height`` rows keeping the aspect ratio.

    The image is resampled bilinearly, column labels by nearest neighbour and
    segment bounds are re-derived from the resampled labels.  Already-sized
    samples are returned unchanged.
    """
    h, w = sample.image.shape
    if h < 1:
        raise UnusableSample("empty image")
    if h == height:
        if w < MIN_WIDTH:
            raise UnusableSample(f"{sample.line_id}: width {w} below {MIN_WIDTH}")
        return sample
    new_w = int(round(w * height / h))
    if new_w < MIN_WIDTH:
        raise UnusableSample(f"{sample.line_id}: width {new_w} below {MIN_WIDTH} after resizing")
    image = np.clip(_resize_bilinear(sample.image, height, new_w), 0.0, 1.0).astype(np.float32)
    labels = resample_labels(sample.column_labels, new_w)
    segments = segments_from_labels(labels)
    if [s.group for s in segments] == [s.group for s in sample.segments]:
        segments = [Segment(s.x0, s.x1, s.group, o.text) for s, o in zip(segments, sample.segments)]
    return replace(sample, image=image, column_labels=labels, segments=segments)


# -- offline ------------------------------------------------------------------

WARP, EROSION, DILATION, BLUR, UNSHARP = "warp", "erosion", "dilation", "blur", "unsharp"


@dataclass(frozen=True)
class AugmentationPlan:
    """A non-empty choice of at most one augmentation per kind, with parameters.

    Kinds: warping; morphology (erosion or dilation); filtering (blur or
    unsharp).  ``variance`` is the Gaussian variance for the filter.
    """

    warp: bool = False
    morphology: str | None = None
    filtering: str | None = None
    variance: float = 1.0
    sigma: float = WARP_SIGMA
    maxdelta: float = WARP_MAXDELTA
    seed: int = 0

    def __post_init__(self):
        if self.morphology not in (None, EROSION, DILATION):
            raise ValueError(f"bad morphology {self.morphology!r}")
        if self.filtering not in (None, BLUR, UNSHARP):
            raise ValueError(f"bad filtering {self.filtering!r}")
        if not (self.warp or self.morphology or self.filtering):
            raise ValueError("augmentation plan must not be empty")

    @property
    def kinds(self) -> list[str]:
        out = [WARP] if self.warp else []
        return out + [k for k in (self.morphology, self.filtering) if k]


def random_plan(rng: np.random.Generator) -> AugmentationPlan:
    """Uniform over the 17 non-empty combinations, parameters drawn from the fixed ranges."""
    combos = [
        (w, m, f)
        for w in (False, True)
        for m in (None, EROSION, DILATION)
        for f in (None, BLUR, UNSHARP)
        if w or m or f
    ]
    w, m, f = combos[int(rng.integers(len(combos)))]
    return AugmentationPlan(
        warp=w,
        morphology=m,
        filtering=f,
        variance=float(rng.uniform(*FILTER_VARIANCE)),
        seed=int(rng.integers(2**31)),
    )


def warp_field(shape, sigma: float, maxdelta: float, rng: np.random.Generator) -> np.ndarray:
    """Random displacement field ``(2, H, W)`` smoothed by a Gaussian, bounded by ``maxdelta``."""
    deltas = rng.random((2,) + tuple(shape))
    deltas = ndi.gaussian_filter(deltas, (0, sigma, sigma))
    deltas -= deltas.min()
    top = deltas.max()
    if top > 0:
        deltas /= top
    return (2.0 * deltas - 1.0) * maxdelta


def warp(image: np.ndarray, sigma: float, maxdelta: float, rng: np.random.Generator) -> np.ndarray:
    if maxdelta == 0:
        return image.copy()
    h, w = image.shape
    d = warp_field((h, w), sigma, maxdelta, rng)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ndi.map_coordinates(image, [yy + d[0], xx + d[1]], order=1, mode="reflect")


def erode(image: np.ndarray) -> np.ndarray:
    return ndi.grey_erosion(image, size=MORPH_SIZE)


def dilate(image: np.ndarray) -> np.ndarray:
    return ndi.grey_dilation(image, size=MORPH_SIZE)


def gaussian_blur(image: np.ndarray, variance: float) -> np.ndarray:
    return ndi.gaussian_filter(image, math.sqrt(variance), mode="nearest")


def unsharp(image: np.ndarray, variance: float) -> np.ndarray:
    return image + (image - gaussian_blur(image, variance))


def apply_plan(image: np.ndarray, plan: AugmentationPlan) -> np.ndarray:
    rng = np.random.default_rng(plan.seed)
    out = np.asarray(image, dtype=np.float64)
    if plan.warp:
        out = warp(out, plan.sigma, plan.maxdelta, rng)
    if plan.morphology == EROSION:
        out = erode(out)
    elif plan.morphology == DILATION:
        out = dilate(out)
    if plan.filtering == BLUR:
        out = gaussian_blur(out, plan.variance)
    elif plan.filtering == UNSHARP:
        out = unsharp(out, plan.variance)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment_offline(sample: LineSample, plan: AugmentationPlan, quantize: bool = True) -> LineSample:
    """Apply ``plan``; transcript, segments and column labels are carried over."""
    img = apply_plan(sample.image, plan)
    if quantize:
        img = to_uint8(img).astype(np.float32) / 255.0
    return sample.with_image(img)


def augment_dataset(samples: Sequence[LineSample], seed: int, copies: int = 2) -> list[LineSample]:
    """Originals followed by ``copies`` augmented variants each (3x the lines by default)."""
    out = []
    for i, s in enumerate(samples):
        out.append(s)
        for k in range(copies):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), i, k]))
            aug = augment_offline(s, random_plan(rng))
            aug.line_id = f"{s.line_id}-aug{k + 1}"
            out.append(aug)
    return out


# -- runtime ------------------------------------------------------------------

MAX_SHEAR_DEG = 5.0
MAX_CONTRAST = 0.2
MAX_BRIGHTNESS = 0.2


@dataclass(frozen=True)
class RuntimeParams:
    shear_deg: float = 0.0
    contrast: float = 1.0
    brightness: float = 0.0
    fill: float = field(default=1.0)


def draw_runtime_params(rng: np.random.Generator) -> RuntimeParams:
    return RuntimeParams(
        shear_deg=float(rng.uniform(-MAX_SHEAR_DEG, MAX_SHEAR_DEG)),
        contrast=float(rng.uniform(1 - MAX_CONTRAST, 1 + MAX_CONTRAST)),
        brightness=float(rng.uniform(-MAX_BRIGHTNESS, MAX_BRIGHTNESS)),
    )


def shear(image: np.ndarray, angle_deg: float, fill: float = 1.0) -> np.ndarray:
    """Horizontal shear about the middle row; width is preserved, uncovered pixels take ``fill``."""
    if angle_deg == 0:
        return image.copy()
    h, _ = image.shape
    t = math.tan(math.radians(angle_deg))
    # output (y, x) samples input (y, x + t * (y - centre))
    matrix = np.array([[1.0, 0.0], [t, 1.0]])
    offset = np.array([0.0, -t * (h - 1) / 2.0])
    return ndi.affine_transform(image, matrix, offset=offset, order=1, mode="constant", cval=fill)


def adjust(image: np.ndarray, contrast: float, brightness: float) -> np.ndarray:
    """Contrast pivoting on mid-gray 0.5, then an additive brightness shift."""
    return (image - 0.5) * contrast + 0.5 + brightness


def apply_runtime(image: np.ndarray, params: RuntimeParams) -> np.ndarray:
    out = shear(np.asarray(image, dtype=np.float32), params.shear_deg, params.fill)
    out = adjust(out, params.contrast, params.brightness)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment_runtime(image: np.ndarray, seed) -> np.ndarray:
    """Random shear (+-5 deg), contrast and brightness (+-20 %), seeded."""
    rng = np.random.default_rng(seed)
    return apply_runtime(image, draw_runtime_params(rng))
