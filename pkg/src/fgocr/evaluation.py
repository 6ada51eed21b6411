"""Character error rates, subset reports and length-binned analysis.

The CER of a corpus is the summed edit distance over the summed
ground-truth length, not the mean of per-line rates.  Distances count
unicode codepoints, so a character written with a combining mark costs
two edits when wrong.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data.fonts import GOTHIC, ROMAN, FontGroup
from .data.samples import LineSample
from .pipelines import smooth_segments


def levenshtein(a: str, b: str) -> int:
    """Minimal number of insertions, deletions and substitutions turning ``a`` into ``b``."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    bb = np.array([ord(c) for c in b])
    prev = np.arange(len(b) + 1)
    for i, ca in enumerate(a, 1):
        sub = prev[:-1] + (bb != ord(ca))
        cur = np.empty_like(prev)
        cur[0] = i
        # deletion/substitution first, insertions need the running minimum
        cur[1:] = np.minimum(sub, prev[1:] + 1)
        np.minimum.accumulate(cur - np.arange(len(cur)), out=cur)
        cur += np.arange(len(cur))
        prev = cur
    return int(prev[-1])


def corpus_cer(pairs: Iterable[tuple[str, str]]) -> float:
    """Summed distance over summed ground-truth length for ``(hypothesis, ground_truth)`` pairs."""
    dist = total = 0
    for hyp, gt in pairs:
        dist += levenshtein(hyp, gt)
        total += len(gt)
    if total == 0:
        raise ValueError("CER undefined: total ground-truth length is zero")
    return dist / total


# -- subset report ------------------------------------------------------------

ALL, MULT, GOTHIC_COL, ROMAN_COL = "All", "Mult.", "Got.", "Rom."
TABLE_COLUMNS = [ALL, MULT, GOTHIC_COL, ROMAN_COL] + [g.short for g in sorted(FontGroup, key=lambda g: g.label)]


@dataclass
class SubsetScore:
    distance: int = 0
    length: int = 0
    lines: int = 0

    @property
    def cer(self) -> float | None:
        return self.distance / self.length if self.length else None

    def add(self, dist: int, length: int) -> None:
        self.distance += dist
        self.length += length
        self.lines += 1


@dataclass
class CerReport:
    """Per-subset totals for one system; subsets follow the column layout of ``TABLE_COLUMNS``."""

    system: str
    subsets: dict[str, SubsetScore] = field(default_factory=lambda: {c: SubsetScore() for c in TABLE_COLUMNS})

    def cer(self, column: str) -> float | None:
        return self.subsets[column].cer

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "subsets": {
                c: {"distance": s.distance, "length": s.length, "lines": s.lines, "cer": s.cer}
                for c, s in self.subsets.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def line_subsets(sample: LineSample, height: int | None = None) -> list[str]:
    """Report columns a test line contributes to, from its ground-truth column labels."""
    h = height or sample.height
    groups = {s.group for s in smooth_segments(sample.column_labels, h)}
    if len(groups) >= 2:
        return [ALL, MULT]
    (g,) = groups
    cols = [ALL, g.short]
    if g in GOTHIC:
        cols.append(GOTHIC_COL)
    elif g in ROMAN:
        cols.append(ROMAN_COL)
    return cols


def subset_report(system: str, samples: Sequence[LineSample], hypotheses: Mapping[str, str], key=None) -> CerReport:
    """CER per subset for ``hypotheses`` (keyed by ``key(sample)``, default the line key)."""
    from .data.samples import line_key

    key = key or line_key
    report = CerReport(system)
    for s in samples:
        hyp = hypotheses[key(s)]
        d = levenshtein(hyp, s.transcript)
        for col in line_subsets(s):
            report.subsets[col].add(d, len(s.transcript))
    return report


def format_table(reports: Sequence[CerReport], columns: Sequence[str] = TABLE_COLUMNS, empty: str = "-") -> str:
    """Aligned text table, one row per system, CER in percent."""
    name_w = max([len("System")] + [len(r.system) for r in reports])
    widths = [max(len(c), 6) for c in columns]
    head = "System".ljust(name_w) + "".join("  " + c.rjust(w) for c, w in zip(columns, widths))
    rows = [head, "-" * len(head)]
    for r in reports:
        cells = []
        for c, w in zip(columns, widths):
            v = r.cer(c)
            cells.append("  " + (empty if v is None else f"{100 * v:.2f}").rjust(w))
        rows.append(r.system.ljust(name_w) + "".join(cells))
    counts = "lines".ljust(name_w) + "".join(
        "  " + str(reports[0].subsets[c].lines if reports else 0).rjust(w) for c, w in zip(columns, widths)
    )
    rows.append(counts)
    return "\n".join(rows) + "\n"


# -- length bins --------------------------------------------------------------


@dataclass
class LengthBin:
    lo: int
    hi: int
    cers: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.cers))

    @property
    def variance(self) -> float:
        return float(np.var(self.cers))


@dataclass
class LengthBinReport:
    system: str
    bin_width: int
    bins: list[LengthBin]

    def bin_for(self, length: int) -> LengthBin | None:
        for b in self.bins:
            if b.lo <= length <= b.hi:
                return b
        return None

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "bin_width": self.bin_width,
            "bins": [
                {"lo": b.lo, "hi": b.hi, "lines": len(b.cers), "mean_cer": b.mean, "var_cer": b.variance}
                for b in self.bins
            ],
        }

    def format(self) -> str:
        rows = [f"{self.system}: mean line CER by transcript length", f"{'length':>9}  {'lines':>5}  {'mean':>7}  {'var':>8}"]
        for b in self.bins:
            rows.append(f"{f'{b.lo}-{b.hi}':>9}  {len(b.cers):>5}  {100 * b.mean:7.2f}  {b.variance:8.5f}")
        return "\n".join(rows) + "\n"


def bin_bounds(length: int, width: int = 10) -> tuple[int, int]:
    """Inclusive bounds of the bin holding ``length``: 1-10, 11-20, ..."""
    if length < 1:
        raise ValueError("lengths start at 1")
    k = (length - 1) // width
    return k * width + 1, (k + 1) * width


def length_bin_report(system: str, pairs: Iterable[tuple[str, str]], bin_width: int = 10) -> LengthBinReport:
    """Mean line-level CER per transcript-length bin; empty bins are omitted."""
    bins: dict[tuple[int, int], LengthBin] = {}
    for hyp, gt in pairs:
        if not gt:
            continue
        lo, hi = bin_bounds(len(gt), bin_width)
        bins.setdefault((lo, hi), LengthBin(lo, hi)).cers.append(levenshtein(hyp, gt) / len(gt))
    return LengthBinReport(system, bin_width, [bins[k] for k in sorted(bins)])


def per_line_tsv(samples: Sequence[LineSample], hypotheses: Mapping[str, str], key=None) -> str:
    """``id<TAB>ground truth<TAB>hypothesis<TAB>distance`` per line."""
    from .data.samples import line_key

    key = key or line_key
    out = []
    for s in samples:
        k = key(s)
        hyp = hypotheses[k]
        out.append(f"{k}\t{s.transcript}\t{hyp}\t{levenshtein(hyp, s.transcript)}")
    return "\n".join(out) + "\n"
