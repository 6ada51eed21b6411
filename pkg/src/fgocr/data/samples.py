"""Line samples and their on-disk layout.

A dataset is a directory with one sub-directory per book.  Each line is a
pair ``<line_id>.png`` (8-bit grayscale, dark ink on light paper) and
``<line_id>.json`` holding::

    {"transcript": "...", "book_id": "...",
     "segments": [{"x0": 0, "x1": 120, "group": "Fraktur", "text": "..."}]}

``text`` inside a segment is optional; when present the segment texts
concatenate to the transcript.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .fonts import FontGroup


@dataclass(frozen=True)
class Segment:
    """Half-open column interval ``[x0, x1)`` carrying one font group."""

    x0: int
    x1: int
    group: FontGroup
    text: str | None = None

    def __post_init__(self):
        if not self.x0 < self.x1:
            raise ValueError(f"empty segment [{self.x0}, {self.x1})")

    @property
    def width(self) -> int:
        return self.x1 - self.x0


def labels_from_segments(segments: Sequence[Segment], width: int) -> np.ndarray:
    labels = np.full(width, -1, dtype=np.int8)
    for s in segments:
        labels[s.x0 : s.x1] = int(s.group)
    return labels


def segments_from_labels(labels: np.ndarray) -> list[Segment]:
    """Maximal runs of equal labels."""
    labels = np.asarray(labels)
    out = []
    start = 0
    for x in range(1, len(labels) + 1):
        if x == len(labels) or labels[x] != labels[start]:
            out.append(Segment(start, x, FontGroup(int(labels[start]))))
            start = x
    return out


@dataclass
class LineSample:
    image: np.ndarray  # (H, W) float32 in [0, 1], 1 = paper
    transcript: str
    segments: list[Segment]
    book_id: str
    line_id: str = ""
    column_labels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.column_labels is None:
            self.column_labels = labels_from_segments(self.segments, self.width)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def groups(self) -> list[FontGroup]:
        seen = []
        for s in self.segments:
            if s.group not in seen:
                seen.append(s.group)
        return seen

    def validate(self, training: bool = False) -> None:
        if not self.segments:
            raise ValueError(f"{self.line_id}: no segments")
        pos = 0
        for s in self.segments:
            if s.x0 != pos:
                raise ValueError(f"{self.line_id}: segments leave a gap or overlap at column {pos}")
            pos = s.x1
        if pos != self.width:
            raise ValueError(f"{self.line_id}: segments cover {pos} columns, image has {self.width}")
        if len(self.column_labels) != self.width:
            raise ValueError(f"{self.line_id}: column label count differs from width")
        if not np.array_equal(self.column_labels, labels_from_segments(self.segments, self.width)):
            raise ValueError(f"{self.line_id}: column labels disagree with segments")
        if training and not self.transcript:
            raise ValueError(f"{self.line_id}: empty transcript in training data")

    def with_image(self, image: np.ndarray) -> "LineSample":
        return replace(self, image=image.astype(np.float32), column_labels=self.column_labels.copy())

    def char_counts(self) -> Counter:
        """Characters per font group.

        Uses the per-segment texts when available, otherwise splits the
        transcript proportionally to the segment widths.
        """
        counts: Counter = Counter()
        if all(s.text is not None for s in self.segments):
            for s in self.segments:
                counts[s.group] += len(s.text)
            return counts
        n = len(self.transcript)
        assigned = 0
        for k, s in enumerate(self.segments):
            share = n - assigned if k == len(self.segments) - 1 else round(n * s.width / self.width)
            counts[s.group] += share
            assigned += share
        return counts


def _sidecar(sample: LineSample) -> dict:
    segs = []
    for s in sample.segments:
        d = {"x0": s.x0, "x1": s.x1, "group": s.group.label}
        if s.text is not None:
            d["text"] = s.text
        segs.append(d)
    return {"book_id": sample.book_id, "segments": segs, "transcript": sample.transcript}


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def save_sample(sample: LineSample, root) -> Path:
    book_dir = Path(root) / sample.book_id
    book_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(sample.image), mode="L").save(book_dir / f"{sample.line_id}.png")
    (book_dir / f"{sample.line_id}.json").write_text(
        json.dumps(_sidecar(sample), ensure_ascii=False, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return book_dir / f"{sample.line_id}.png"


def save_dataset(samples: Iterable[LineSample], root) -> int:
    n = 0
    for s in samples:
        save_sample(s, root)
        n += 1
    return n


def load_sample(png_path) -> LineSample:
    png_path = Path(png_path)
    meta = json.loads(png_path.with_suffix(".json").read_text(encoding="utf-8"))
    image = np.asarray(Image.open(png_path).convert("L"), dtype=np.float32) / 255.0
    segments = [Segment(d["x0"], d["x1"], FontGroup.parse(d["group"]), d.get("text")) for d in meta["segments"]]
    sample = LineSample(
        image=image,
        transcript=meta["transcript"],
        segments=segments,
        book_id=meta.get("book_id", png_path.parent.name),
        line_id=png_path.stem,
    )
    sample.validate()
    return sample


def list_books(root) -> list[str]:
    return sorted(p.name for p in Path(root).iterdir() if p.is_dir())


def load_dataset(root, books: Iterable[str] | None = None) -> list[LineSample]:
    """Load every line of the given books (all books by default), sorted by id."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    chosen = list_books(root) if books is None else sorted(books)
    out = []
    for b in chosen:
        for png in sorted((root / b).glob("*.png")):
            out.append(load_sample(png))
    return out


def line_key(sample: LineSample) -> str:
    return f"{sample.book_id}/{sample.line_id}"
