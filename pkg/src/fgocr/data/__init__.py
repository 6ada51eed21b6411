"""Line samples, synthetic books, splits, preprocessing and augmentation."""

from .augment import (
    AugmentationPlan,
    UnusableSample,
    augment_dataset,
    augment_offline,
    augment_runtime,
    preprocess,
    random_plan,
)
from .fonts import GOTHIC, GOTICO_ANTIQUA_PLUS, ROMAN, FontGroup, super_group
from .samples import (
    LineSample,
    Segment,
    labels_from_segments,
    line_key,
    load_dataset,
    save_dataset,
    segments_from_labels,
)
from .splits import DatasetSplit, SplitError, book_char_counts, build_splits
from .synth import DEFAULT_CHARSET, SynthConfig, generate_synthetic_book

__all__ = [
    "AugmentationPlan",
    "DEFAULT_CHARSET",
    "DatasetSplit",
    "FontGroup",
    "GOTHIC",
    "GOTICO_ANTIQUA_PLUS",
    "LineSample",
    "ROMAN",
    "Segment",
    "SplitError",
    "SynthConfig",
    "UnusableSample",
    "augment_dataset",
    "augment_offline",
    "augment_runtime",
    "book_char_counts",
    "build_splits",
    "generate_synthetic_book",
    "labels_from_segments",
    "line_key",
    "load_dataset",
    "preprocess",
    "random_plan",
    "save_dataset",
    "segments_from_labels",
    "super_group",
]
