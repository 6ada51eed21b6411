"""Inference systems: single model, SelOCR, SplitOCR and COCR.

* baseline / single model: greedy decoding of one recognizer.
* SelOCR: a classifier picks one font group per line, whose recognizer
  reads the whole line.
* SplitOCR: per-column group predictions are smoothed into wide
  homogeneous segments; each crop is read by its group's recognizer.
* COCR: every recognizer reads the whole line and their per-step
  distributions are mixed with the classifier's per-step group scores
  before decoding.

All systems run one line at a time, so a line's transcript never depends
on what else is being processed.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .ctc import greedy_decode
from .data.fonts import FontGroup
from .data.samples import Segment
from .models import (
    BASELINE,
    CLASSIFIER,
    COCR,
    COLUMN_CLASSIFIER,
    GOTHIC_ROLE,
    MIN_WIDTH,
    ROMAN_ROLE,
    Charset,
    ColumnClassifier,
    ModelRegistry,
    OcrModel,
    font_role,
    sequence_length,
)


def decode(probs: np.ndarray, charset: Charset) -> str:
    return charset.decode(greedy_decode(probs))


def run_baseline(model: OcrModel, image: np.ndarray) -> str:
    """Greedy transcript of one preprocessed line with a single recognizer."""
    return decode(model.probabilities([image])[0], model.charset)


# -- SelOCR -------------------------------------------------------------------


class ForcedClassifier:
    """Stand-in classifier that always answers ``group`` with full confidence."""

    def __init__(self, groups: Sequence[FontGroup], group: FontGroup):
        self.groups = tuple(FontGroup.parse(g) for g in groups)
        self.group = FontGroup.parse(group)
        if self.group not in self.groups:
            raise ValueError(f"{self.group.label} is not among the classifier groups")

    def scores(self, images: Sequence[np.ndarray]) -> list[np.ndarray]:
        out = []
        for im in images:
            s = np.zeros((sequence_length(im.shape[1]), len(self.groups)), dtype=np.float32)
            s[:, self.groups.index(self.group)] = 1.0
            out.append(s)
        return out


def line_group(classifier, image: np.ndarray) -> FontGroup:
    """Group with the highest time-averaged score; ties go to the lowest index."""
    scores = classifier.scores([image])[0]
    return classifier.groups[int(np.argmax(scores.mean(axis=0)))]


def run_selocr(registry: ModelRegistry, classifier, image: np.ndarray) -> str:
    group = line_group(classifier, image)
    return run_baseline(registry.font_model(group), image)


def oracle_group(sample) -> FontGroup:
    """Majority ground-truth group of a line's pixel columns (ties to the lowest group)."""
    return FontGroup(_majority(np.asarray(sample.column_labels)))


def run_selocr_oracle(registry: ModelRegistry, sample) -> str:
    """SelOCR with the classifier replaced by the line's ground-truth group."""
    return run_baseline(registry.font_model(oracle_group(sample)), sample.image)


# -- SplitOCR -----------------------------------------------------------------


def _runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    cut = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut, [len(labels)]])
    return [(int(a), int(b), int(labels[a])) for a, b in zip(starts, ends)]


def _majority(labels: np.ndarray) -> int:
    vals, counts = np.unique(labels, return_counts=True)
    return int(vals[np.argmax(counts)])


def smooth_segments(column_labels: Sequence[int], line_height: int) -> list[Segment]:
    """Turn noisy per-column group labels into homogeneous segments at least ``line_height`` wide.

    Each round, runs narrower than the line height are dissolved.  A
    stretch of such runs lying between two wide runs is cut in the middle
    (the left neighbour takes the floor half) and each half joins its
    neighbour; a stretch touching a line edge joins its single neighbour.
    If no run is wide, the widest one (leftmost on ties) anchors the line.
    Every enlarged region then takes the majority label of the original
    columns it covers (ties to the lowest label), and equal neighbours are
    merged.  Rounds repeat until no narrow run is left or one segment
    remains.

    Args:
        column_labels: one integer label per pixel column.
        line_height: minimal segment width.

    Returns:
        Segments tiling ``[0, W)`` in order.
    """
    labels = np.asarray(column_labels).astype(np.int64)
    if labels.ndim != 1 or len(labels) == 0:
        raise ValueError("need a non-empty 1-D label array")
    if line_height < 1:
        raise ValueError("line height must be positive")
    width = len(labels)
    runs = _runs(labels)
    while len(runs) > 1:
        wide = [b - a >= line_height for a, b, _ in runs]
        if all(wide):
            break
        if not any(wide):
            sizes = [b - a for a, b, _ in runs]
            wide[int(np.argmax(sizes))] = True
        anchors = [i for i, w in enumerate(wide) if w]
        bounds = []
        for k, i in enumerate(anchors):
            a, b, _ = runs[i]
            if k == 0:
                lo = 0
            else:
                left_end = runs[anchors[k - 1]][1]
                lo = left_end + (a - left_end) // 2
            if k == len(anchors) - 1:
                hi = width
            else:
                right_start = runs[anchors[k + 1]][0]
                hi = b + (right_start - b) // 2
            bounds.append((lo, hi))
        regions = [(lo, hi, _majority(labels[lo:hi])) for lo, hi in bounds]
        merged = [regions[0]]
        for lo, hi, c in regions[1:]:
            if c == merged[-1][2]:
                merged[-1] = (merged[-1][0], hi, c)
            else:
                merged.append((lo, hi, c))
        runs = merged
    return [Segment(a, b, FontGroup(c)) for a, b, c in runs]


def run_splitocr(registry: ModelRegistry, column_classifier: ColumnClassifier, image: np.ndarray) -> str:
    """Classify columns, smooth into segments, read each crop with its group's recognizer."""
    scores = column_classifier.classify_columns([image])[0]
    groups = column_classifier.groups
    labels = np.array([int(groups[k]) for k in np.argmax(scores, axis=1)])
    parts = []
    for seg in smooth_segments(labels, image.shape[0]):
        if seg.width < MIN_WIDTH:
            warnings.warn(f"segment [{seg.x0}, {seg.x1}) narrower than {MIN_WIDTH} px decoded as empty", stacklevel=2)
            parts.append("")
            continue
        parts.append(run_baseline(registry.font_model(seg.group), image[:, seg.x0 : seg.x1]))
    return "".join(parts)


# -- COCR ---------------------------------------------------------------------


def active_groups(weights: np.ndarray, theta: float = 0.0) -> list[int]:
    """Indices of groups whose best score on the line exceeds ``theta``; all of them if none does."""
    if not 0.0 <= theta < 1.0:
        raise ValueError("theta must lie in [0, 1)")
    g = weights.shape[1]
    if theta <= 0.0:
        return list(range(g))
    keep = [k for k in range(g) if float(weights[:, k].max()) > theta]
    return keep or list(range(g))


def fuse(outputs: dict[int, np.ndarray], weights: np.ndarray, theta: float = 0.0) -> np.ndarray:
    """Per-step mixture ``sum_g w[t, g] * p_g[t]`` of recognizer distributions.

    Args:
        outputs: per-step probabilities ``(T, C)`` keyed by group index;
            only the active groups need to be present.
        weights: classifier scores ``(T, G)``, rows summing to one.
        theta: gate; groups never scoring above it on this line are left
            out and the remaining weights renormalised per step.

    Returns:
        ``(T, C)`` float64 distributions.
    """
    w = np.asarray(weights, dtype=np.float64)
    active = active_groups(w, theta)
    wa = w[:, active]
    if len(active) < w.shape[1]:
        tot = wa.sum(axis=1, keepdims=True)
        wa = np.where(tot > 0, wa / np.where(tot > 0, tot, 1.0), 1.0 / len(active))
    fused = None
    for j, k in enumerate(active):
        term = wa[:, j : j + 1] * np.asarray(outputs[k], dtype=np.float64)
        fused = term if fused is None else fused + term
    return fused


def run_cocr(registry: ModelRegistry, classifier, image: np.ndarray, theta: float = 0.0) -> str:
    weights = classifier.scores([image])[0]
    active = active_groups(weights, theta)
    outputs = {k: registry.font_model(classifier.groups[k]).probabilities([image])[0] for k in active}
    charset = registry.font_model(classifier.groups[active[0]]).charset
    return decode(fuse(outputs, weights, theta), charset)


def run_cocr_system(system, image: np.ndarray, theta: float = 0.0) -> str:
    """COCR with a jointly trained system (its own branches and classifier)."""
    weights = system.classifier.scores([image])[0]
    active = active_groups(weights, theta)
    outputs = {k: system.branches[system.groups[k]].probabilities([image])[0] for k in active}
    return decode(fuse(outputs, weights, theta), system.charset)


# -- system selector ----------------------------------------------------------

SYSTEMS = ("baseline", "font", "gothic", "roman", "selocr", "splitocr", "cocr", "cocr-joint")


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    group: FontGroup | None = None

    @property
    def name(self) -> str:
        return f"font:{self.group.label}" if self.kind == "font" else self.kind


def parse_system(selector: str) -> SystemSpec:
    """``baseline | font:<group> | gothic | roman | selocr | splitocr | cocr | cocr-joint``."""
    s = selector.strip()
    if s.lower().startswith("font:"):
        return SystemSpec("font", FontGroup.parse(s[5:]))
    if s.lower() in SYSTEMS and s.lower() != "font":
        return SystemSpec(s.lower())
    raise ValueError(f"unknown system {selector!r}; expected one of baseline, font:<group>, gothic, roman, selocr, splitocr, cocr, cocr-joint")


def required_roles(spec: SystemSpec, groups: Iterable[FontGroup] = ()) -> list[str]:
    if spec.kind == "baseline":
        return [BASELINE]
    if spec.kind == "font":
        return [font_role(spec.group)]
    if spec.kind == "gothic":
        return [GOTHIC_ROLE]
    if spec.kind == "roman":
        return [ROMAN_ROLE]
    if spec.kind == "cocr-joint":
        return [COCR]
    fonts = [font_role(g) for g in groups]
    if spec.kind in ("selocr", "splitocr"):
        return [COLUMN_CLASSIFIER] + fonts
    return [CLASSIFIER] + fonts


def system_runner(spec: SystemSpec, registry: ModelRegistry, theta: float = 0.0) -> Callable[[np.ndarray], str]:
    """A one-line transcription function for the selected system."""
    if spec.kind == "baseline":
        model = registry.get(BASELINE)
    elif spec.kind == "font":
        model = registry.font_model(spec.group)
    elif spec.kind in ("gothic", "roman"):
        model = registry.get(GOTHIC_ROLE if spec.kind == "gothic" else ROMAN_ROLE)
    else:
        model = None
    if model is not None:
        return lambda im: run_baseline(model, im)
    if spec.kind == "selocr":
        clf = registry.get(COLUMN_CLASSIFIER)
        return lambda im: run_selocr(registry, clf, im)
    if spec.kind == "splitocr":
        clf = registry.get(COLUMN_CLASSIFIER)
        return lambda im: run_splitocr(registry, clf, im)
    if spec.kind == "cocr-joint":
        system = registry.get(COCR)
        return lambda im: run_cocr_system(system, im, theta)
    clf = registry.get(CLASSIFIER)
    return lambda im: run_cocr(registry, clf, im, theta)


def transcribe(fn: Callable[[np.ndarray], str], images: Sequence[np.ndarray], jobs: int = 1) -> list[str]:
    """Apply ``fn`` to every image, optionally on a thread pool; order is preserved."""
    if jobs <= 1:
        return [fn(im) for im in images]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, images))
