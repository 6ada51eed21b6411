"""Book-level train/validation/test splits.

Test books are chosen among many random candidate sets: every candidate
must reach a minimum number of characters for each font group, and the
one with the most even per-group character counts (lowest variance) wins.
Validation books are then picked the same way from the remaining books
with a smaller threshold; everything else is training data.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fonts import FontGroup
from .samples import LineSample

SPLITS = ("train", "validation", "test")


class SplitError(ValueError):
    """No candidate satisfies the per-group minimum."""


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    char_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        sets = [set(self.train), set(self.validation), set(self.test)]
        for a in range(3):
            for b in range(a + 1, 3):
                common = sets[a] & sets[b]
                if common:
                    raise ValueError(f"books {sorted(common)} appear in both {SPLITS[a]} and {SPLITS[b]}")

    def books(self, split: str) -> list[str]:
        return list(getattr(self, split))

    def to_json(self) -> str:
        return json.dumps(
            {"train": self.train, "validation": self.validation, "test": self.test, "char_counts": self.char_counts},
            indent=1,
            sort_keys=True,
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["train"], d["validation"], d["test"], d.get("char_counts", {}))


def book_char_counts(samples: Iterable[LineSample]) -> dict[str, Counter]:
    out: dict[str, Counter] = {}
    for s in samples:
        out.setdefault(s.book_id, Counter()).update(s.char_counts())
    return out


def _totals(books: Iterable[str], counts: Mapping[str, Mapping], groups: Sequence) -> np.ndarray:
    tot = np.zeros(len(groups), dtype=np.int64)
    for b in books:
        for k, g in enumerate(groups):
            tot[k] += counts[b].get(g, 0)
    return tot


def random_candidate(
    books: Sequence[str],
    counts: Mapping[str, Mapping],
    groups: Sequence,
    min_chars: int,
    rng: np.random.Generator,
) -> list[str]:
    """Visit books in random order, keeping those that help a group still below ``min_chars``."""
    chosen = []
    tot = np.zeros(len(groups), dtype=np.int64)
    for idx in rng.permutation(len(books)):
        if np.all(tot >= min_chars):
            break
        b = books[idx]
        add = np.array([counts[b].get(g, 0) for g in groups])
        if np.any((tot < min_chars) & (add > 0)):
            chosen.append(b)
            tot += add
    return sorted(chosen)


def generate_candidates(books, counts, groups, min_chars, n_trials, rng) -> list[list[str]]:
    return [random_candidate(books, counts, groups, min_chars, rng) for _ in range(n_trials)]


def select_candidate(candidates: Sequence[Sequence[str]], counts, groups, min_chars: int) -> int:
    """Index of the feasible candidate with minimal per-group count variance (first on ties)."""
    best, best_var = -1, np.inf
    for i, cand in enumerate(candidates):
        tot = _totals(cand, counts, groups)
        if np.any(tot < min_chars):
            continue
        var = float(np.var(tot))
        if var < best_var:
            best, best_var = i, var
    if best < 0:
        tot = _totals(sorted({b for c in candidates for b in c}), counts, groups)
        deficits = {str(getattr(g, "label", g)): int(min_chars - t) for g, t in zip(groups, tot) if t < min_chars}
        raise SplitError(f"no candidate reaches {min_chars} characters per group; deficits: {deficits}")
    return best


def _pick(books, counts, groups, min_chars, n_trials, rng) -> list[str]:
    cands = generate_candidates(books, counts, groups, min_chars, n_trials, rng)
    return list(cands[select_candidate(cands, counts, groups, min_chars)])


def build_splits(
    book_counts: Mapping[str, Mapping],
    min_chars_per_group: int = 1000,
    n_trials: int = 200,
    seed: int = 0,
    min_val_chars: int | None = None,
    groups: Sequence[FontGroup] | None = None,
) -> DatasetSplit:
    """Book-level split from per-book, per-group character counts.

    Args:
        book_counts: ``{book_id: {FontGroup: n_chars}}``.
        min_chars_per_group: test-set minimum for every group.
        n_trials: random candidates examined per split.
        seed: RNG seed; the split is a pure function of the inputs.
        min_val_chars: validation minimum (default: half the test minimum).
        groups: groups to balance (default: all groups seen in the corpus).
    """
    books = sorted(book_counts)
    if groups is None:
        groups = sorted({g for c in book_counts.values() for g, n in c.items() if n > 0})
    groups = list(groups)
    if min_val_chars is None:
        min_val_chars = max(1, min_chars_per_group // 2)
    rng = np.random.default_rng(seed)
    test = _pick(books, book_counts, groups, min_chars_per_group, n_trials, rng)
    rest = [b for b in books if b not in set(test)]
    val = _pick(rest, book_counts, groups, min_val_chars, n_trials, rng)
    train = [b for b in rest if b not in set(val)]

    def summary(bs):
        return {g.label if isinstance(g, FontGroup) else str(g): int(t) for g, t in zip(groups, _totals(bs, book_counts, groups))}

    return DatasetSplit(
        train=train,
        validation=sorted(val),
        test=sorted(test),
        char_counts={"train": summary(train), "validation": summary(val), "test": summary(test)},
    )
