"""Training loops: baseline recognizer, group fine-tuning, the two classifiers, joint COCR.

Every loop shares the same schedule: Adam, validation after each epoch,
the learning rate halved after a fixed number of epochs without
improvement, early stopping after a longer stretch, and the best epoch's
parameters and optimizer state kept as the result.  Epoch 0 is the
untouched starting point, evaluated before any update.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .ctc import ctc_loss_tensor, min_input_length
from .data.augment import augment_runtime
from .data.fonts import FontGroup
from .data.samples import LineSample
from .evaluation import corpus_cer
from .models import (
    Charset,
    CocrClassifier,
    CocrSystem,
    ColumnClassifier,
    OcrModel,
    downscale_labels,
    init_finetune,
    model_from_checkpoint,
    prepare_batch,
    sequence_length,
)
from .nn.optim import Adam, AdamState
from .nn.tensor import Tensor, add, getitem, log, log_softmax, mul, neg, softmax, tmean
from .pipelines import decode, fuse

log_ = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training cannot start or had to abort (bad data, non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and batching.

    Args:
        batch_size: lines per update.
        max_epochs: upper bound on training epochs (0 returns the start point).
        patience: epochs without improvement before stopping.
        initial_lr: learning rate for models trained from scratch.
        lr_halving_patience: epochs without improvement before each halving.
        seed: drives batch order, runtime augmentation and initial weights.
        max_batches_per_epoch: optional cap, for quick runs.
        runtime_augmentation: shear/contrast/brightness drawn per epoch.
    """

    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 20
    initial_lr: float = 1e-3
    lr_halving_patience: int = 5
    seed: int = 0
    max_batches_per_epoch: int | None = None
    runtime_augmentation: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.lr_halving_patience < 1:
            raise ValueError("batch size and patience values must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if self.patience <= self.lr_halving_patience:
            raise ValueError("patience must exceed lr_halving_patience")
        if self.max_batches_per_epoch is not None and self.max_batches_per_epoch < 1:
            raise ValueError("max_batches_per_epoch must be positive")

    def replace(self, **kw) -> "TrainConfig":
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)


class PlateauSchedule:
    """Counts epochs without strict improvement of a metric to minimise."""

    def __init__(self, patience: int, halving_patience: int):
        self.patience = patience
        self.halving_patience = halving_patience
        self.best = math.inf
        self.best_epoch = -1
        self.since_best = 0
        self.since_halving = 0

    def update(self, epoch: int, metric: float) -> tuple[bool, bool, bool]:
        """Record ``metric``; returns ``(improved, halve_lr, stop)``."""
        if metric < self.best:
            self.best, self.best_epoch = metric, epoch
            self.since_best = self.since_halving = 0
            return True, False, False
        self.since_best += 1
        self.since_halving += 1
        halve = self.since_halving >= self.halving_patience
        if halve:
            self.since_halving = 0
        return False, halve, self.since_best >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None
    metric: float
    lr: float
    improved: bool
    wall_time: float = 0.0


@dataclass
class TrainLog:
    """Per-epoch records, optionally mirrored to a JSON-lines file."""

    name: str = "train"
    records: list[EpochRecord] = field(default_factory=list)
    path: Path | None = None

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"run": self.name, **asdict(rec)}, sort_keys=True) + "\n")

    @property
    def best_epoch(self) -> int:
        return min(self.records, key=lambda r: (r.metric, r.epoch)).epoch

    @property
    def best_metric(self) -> float:
        return min(r.metric for r in self.records)

    @property
    def epochs(self) -> int:
        return self.records[-1].epoch if self.records else 0

    def deterministic(self) -> list[dict]:
        """Records without timing, for run-to-run comparisons."""
        return [{k: v for k, v in asdict(r).items() if k != "wall_time"} for r in self.records]


def batch_order(widths: Sequence[int], batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Batches of similar width (jittered sort), in shuffled order."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0xBA7C]))
    widths = np.asarray(widths, dtype=np.float64)
    keys = widths * rng.uniform(0.9, 1.1, size=len(widths))
    order = np.argsort(keys, kind="stable")
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def _runtime_image(sample: LineSample, cfg: TrainConfig, epoch: int, index: int) -> np.ndarray:
    if not cfg.runtime_augmentation:
        return sample.image
    return augment_runtime(sample.image, np.random.SeedSequence([int(cfg.seed), int(epoch), int(index)]))


def fit(
    model,
    batch_loss: Callable[[np.ndarray, int], Tensor],
    widths: Sequence[int],
    evaluate: Callable[[], float],
    cfg: TrainConfig,
    state: AdamState | None = None,
    log: TrainLog | None = None,
    meta: dict | None = None,
) -> tuple[nn.Checkpoint, TrainLog]:
    """Generic loop; returns the best checkpoint (parameters and optimizer state) and the log.

    Args:
        model: module exposing ``named_parameters`` and ``checkpoint``.
        batch_loss: ``(item indices, epoch) -> scalar loss`` building the graph.
        widths: image width of every training item, for bucketing.
        evaluate: validation metric to minimise.
        cfg: schedule.
        state: optimizer state to resume from (fresh Adam otherwise).
        log: where to record epochs.
        meta: extra checkpoint metadata.
    """
    log = log if log is not None else TrainLog()
    opt = Adam(model.named_parameters(), lr=cfg.initial_lr, state=state)
    sched = PlateauSchedule(cfg.patience, cfg.lr_halving_patience)
    t0 = time.perf_counter()
    metric = evaluate()
    sched.update(0, metric)
    best = model.checkpoint(copy.deepcopy(opt.state), meta)
    log.append(EpochRecord(0, None, metric, opt.lr, True, time.perf_counter() - t0))
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        batches = batch_order(widths, cfg.batch_size, cfg.seed, epoch)
        if cfg.max_batches_per_epoch is not None:
            batches = batches[: cfg.max_batches_per_epoch]
        losses = []
        for b, idx in enumerate(batches):
            loss = batch_loss(idx, epoch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {b} (items {idx.tolist()})")
            loss.backward()
            try:
                opt.step()
            except FloatingPointError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e
            opt.zero_grad()
            losses.append(value)
        metric = evaluate()
        improved, halve, stop = sched.update(epoch, metric)
        if improved:
            best = model.checkpoint(copy.deepcopy(opt.state), meta)
        log.append(EpochRecord(epoch, float(np.mean(losses)), metric, opt.lr, improved, time.perf_counter() - t0))
        log_.info("%s epoch %d loss %.4f metric %.4f lr %.2e", log.name, epoch, np.mean(losses), metric, opt.lr)
        if halve:
            opt.lr = opt.lr / 2
        if stop:
            break
    return best, log


# -- recognizers --------------------------------------------------------------


def _ctc_items(samples: Sequence[LineSample], charset: Charset) -> tuple[list[LineSample], list[list[int]]]:
    keep, labels = [], []
    for s in samples:
        lab = charset.encode(s.transcript)
        if not lab:
            continue
        if min_input_length(lab) > sequence_length(s.width):
            log_.warning("skipping %s/%s: too narrow for its transcript", s.book_id, s.line_id)
            continue
        keep.append(s)
        labels.append(lab)
    return keep, labels


def validation_cer(model: OcrModel, samples: Sequence[LineSample]) -> float:
    pairs = [(decode(p, model.charset), s.transcript) for s, p in zip(samples, _probs(model, samples))]
    return corpus_cer(pairs)


def _probs(model: OcrModel, samples: Sequence[LineSample]):
    for s in samples:
        yield model.probabilities([s.image])[0]


def _train_ocr(model: OcrModel, train, val, cfg, state, log, meta=None):
    items, labels = _ctc_items(train, model.charset)
    if not items:
        raise TrainingError("no usable training lines")
    if not val:
        raise TrainingError("validation set is empty")

    def batch_loss(idx, epoch):
        images = [_runtime_image(items[i], cfg, epoch, i) for i in idx]
        x, widths = prepare_batch(images)
        logits, lengths = model(x, widths)
        return ctc_loss_tensor(log_softmax(logits), [labels[i] for i in idx], lengths)

    return fit(model, batch_loss, [s.width for s in items], lambda: validation_cer(model, val), cfg, state, log, meta)


def train_baseline(
    train: Sequence[LineSample],
    validation: Sequence[LineSample],
    cfg: TrainConfig = TrainConfig(),
    charset: Charset | None = None,
    log_path=None,
) -> tuple[nn.Checkpoint, TrainLog]:
    """Recognizer from random weights on all training lines, selected by validation CER."""
    if not train or not validation:
        raise TrainingError("train and validation splits must be non-empty")
    charset = charset or Charset.from_texts(s.transcript for s in train)
    model = OcrModel(charset, seed=cfg.seed)
    return _train_ocr(model, train, validation, cfg, None, TrainLog("baseline", path=log_path))


def group_lines(samples: Sequence[LineSample], groups: Sequence[FontGroup]) -> list[LineSample]:
    """Lines printed only in the given groups."""
    allowed = {FontGroup.parse(g) for g in groups}
    return [s for s in samples if set(s.groups) <= allowed]


def finetune_group(
    baseline_ckpt,
    train: Sequence[LineSample],
    validation: Sequence[LineSample],
    groups: Sequence[FontGroup],
    cfg: TrainConfig = TrainConfig(),
    log_path=None,
) -> tuple[nn.Checkpoint, TrainLog]:
    """Continue the baseline (weights and Adam state) on the lines of one group or a union of groups."""
    groups = [FontGroup.parse(g) for g in groups]
    tr = group_lines(train, groups)
    va = group_lines(validation, groups)
    names = "+".join(g.label for g in groups)
    if not tr:
        raise TrainingError(f"no training lines for {names}")
    if not va:
        raise TrainingError(f"no validation lines for {names}")
    model, state = init_finetune(baseline_ckpt)
    meta = {"finetuned_on": [g.label for g in groups]}
    return _train_ocr(model, tr, va, cfg, state, TrainLog(f"finetune:{names}", path=log_path), meta)


# -- classifiers --------------------------------------------------------------


def _group_targets(sample: LineSample, groups: Sequence[FontGroup]) -> np.ndarray:
    index = {int(g): k for k, g in enumerate(groups)}
    try:
        return np.array([index[int(c)] for c in sample.column_labels], dtype=np.int64)
    except KeyError as e:
        raise TrainingError(f"{sample.line_id}: column label {e} not among the classifier groups") from None


def cross_entropy(logits: Tensor, rows: np.ndarray, steps: np.ndarray, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` at positions ``(rows, steps)``."""
    lp = log_softmax(logits)
    return neg(tmean(getitem(lp, (rows, steps, targets))))


def _positions(lengths, targets):
    rows = np.concatenate([np.full(len(t), i) for i, t in enumerate(targets)])
    steps = np.concatenate([np.arange(len(t)) for t in targets])
    return rows, steps, np.concatenate(targets)


def step_accuracy(model: CocrClassifier, samples: Sequence[LineSample]) -> float:
    """Share of output steps whose argmax equals the downscaled column label."""
    hit = total = 0
    for s in samples:
        scores = model.scores([s.image])[0]
        tgt = downscale_labels(_group_targets(s, model.groups), len(scores))
        hit += int(np.sum(np.argmax(scores, axis=1) == tgt))
        total += len(tgt)
    return hit / total


def column_accuracy(model: ColumnClassifier, samples: Sequence[LineSample], margin: int = 0) -> float:
    """Share of pixel columns classified correctly, optionally ignoring ``margin`` columns around group changes."""
    hit = total = 0
    for s in samples:
        pred = np.argmax(model.classify_columns([s.image])[0], axis=1)
        tgt = _group_targets(s, model.groups)
        keep = np.ones(len(tgt), dtype=bool)
        if margin:
            for x in np.flatnonzero(tgt[1:] != tgt[:-1]) + 1:
                keep[max(0, x - margin) : x + margin] = False
        hit += int(np.sum(pred[keep] == tgt[keep]))
        total += int(keep.sum())
    return hit / total if total else 1.0


def train_cocr_classifier(
    train: Sequence[LineSample],
    validation: Sequence[LineSample],
    groups: Sequence[FontGroup],
    cfg: TrainConfig = TrainConfig(),
    log_path=None,
) -> tuple[nn.Checkpoint, TrainLog]:
    """Per-step classifier trained on column labels downscaled to the output length by nearest index."""
    groups = [FontGroup.parse(g) for g in groups]
    model = CocrClassifier(groups, seed=cfg.seed)
    targets = [_group_targets(s, groups) for s in train]
    for s in validation:
        _group_targets(s, groups)

    def batch_loss(idx, epoch):
        images = [_runtime_image(train[i], cfg, epoch, i) for i in idx]
        x, widths = prepare_batch(images)
        logits, lengths = model(x, widths, skip_softmax=True)
        tg = [downscale_labels(targets[i], int(t)) for i, t in zip(idx, lengths)]
        return cross_entropy(logits, *_positions(lengths, tg))

    return fit(
        model,
        batch_loss,
        [s.width for s in train],
        lambda: 1.0 - step_accuracy(model, validation),
        cfg,
        None,
        TrainLog("cocr_classifier", path=log_path),
    )


def train_column_classifier(
    train: Sequence[LineSample],
    validation: Sequence[LineSample],
    groups: Sequence[FontGroup],
    cfg: TrainConfig = TrainConfig(batch_size=1),
    log_path=None,
) -> tuple[nn.Checkpoint, TrainLog]:
    """Pixel-column classifier, one line per update, selected by validation column accuracy."""
    if cfg.batch_size != 1:
        raise ValueError(f"the column classifier trains with batch size 1, got {cfg.batch_size}")
    groups = [FontGroup.parse(g) for g in groups]
    model = ColumnClassifier(groups, seed=cfg.seed)
    targets = [_group_targets(s, groups) for s in train]
    for s in validation:
        _group_targets(s, groups)

    def batch_loss(idx, epoch):
        images = [_runtime_image(train[i], cfg, epoch, i) for i in idx]
        x, widths = prepare_batch(images)
        cols, _ = model.forward_columns(x, widths, skip_softmax=True)
        tg = [targets[i] for i in idx]
        return cross_entropy(cols, *_positions(widths, tg))

    return fit(
        model,
        batch_loss,
        [s.width for s in train],
        lambda: 1.0 - column_accuracy(model, validation),
        cfg,
        None,
        TrainLog("column_classifier", path=log_path),
    )


# -- joint COCR ---------------------------------------------------------------

_FUSE_FLOOR = 1e-20


def fused_log_probs(system: CocrSystem, x: Tensor, widths, weights: Tensor | None = None) -> tuple[Tensor, np.ndarray]:
    """Log of the classifier-weighted mixture of branch distributions, as a graph.

    ``weights`` replaces the classifier output (e.g. fixed one-hot scores).
    """
    if weights is None:
        weights, lengths = system.classifier(x, widths)
    else:
        lengths = system.classifier.lengths(widths)
    fused = None
    for k, g in enumerate(system.groups):
        logits, _ = system.branches[g](x, widths)
        term = mul(getitem(weights, (slice(None), slice(None), slice(k, k + 1))), softmax(logits))
        fused = term if fused is None else add(fused, term)
    return log(add(fused, _FUSE_FLOOR)), lengths


def cocr_validation_cer(system: CocrSystem, samples: Sequence[LineSample]) -> float:
    pairs = []
    for s in samples:
        w = system.classifier.scores([s.image])[0]
        outs = {k: system.branches[g].probabilities([s.image])[0] for k, g in enumerate(system.groups)}
        pairs.append((decode(fuse(outs, w), system.charset), s.transcript))
    return corpus_cer(pairs)


def train_cocr_joint(
    baseline_ckpt,
    classifier_ckpt,
    train: Sequence[LineSample],
    validation: Sequence[LineSample],
    cfg: TrainConfig = TrainConfig(),
    log_path=None,
) -> tuple[nn.Checkpoint, TrainLog]:
    """Second phase: every branch starts from the baseline, the classifier from its own training.

    The whole mixture is trained with CTC; the classifier sees no group
    labels in this phase.
    """
    if classifier_ckpt is None:
        raise TrainingError("joint COCR training needs a trained classifier checkpoint (run the first phase)")
    clf_ckpt = classifier_ckpt if isinstance(classifier_ckpt, nn.Checkpoint) else nn.load_checkpoint(classifier_ckpt)
    classifier = model_from_checkpoint(clf_ckpt)
    if not isinstance(classifier, CocrClassifier) or isinstance(classifier, ColumnClassifier):
        raise TrainingError("phase two expects a per-step COCR classifier checkpoint")
    base = baseline_ckpt if isinstance(baseline_ckpt, nn.Checkpoint) else nn.load_checkpoint(baseline_ckpt)
    branches = {g: model_from_checkpoint(base) for g in classifier.groups}
    system = CocrSystem(branches, classifier)
    items, labels = _ctc_items(train, system.charset)
    if not items:
        raise TrainingError("no usable training lines")

    def batch_loss(idx, epoch):
        images = [_runtime_image(items[i], cfg, epoch, i) for i in idx]
        x, widths = prepare_batch(images)
        lp, lengths = fused_log_probs(system, x, widths)
        return ctc_loss_tensor(lp, [labels[i] for i in idx], lengths)

    return fit(
        system,
        batch_loss,
        [s.width for s in items],
        lambda: cocr_validation_cer(system, validation),
        cfg,
        None,
        TrainLog("cocr_joint", path=log_path),
    )


def train_cocr_classifier_then_joint(
    baseline_ckpt,
    train: Sequence[LineSample],
    validation: Sequence[LineSample],
    groups: Sequence[FontGroup],
    classifier_cfg: TrainConfig = TrainConfig(),
    joint_cfg: TrainConfig = TrainConfig(),
) -> tuple[nn.Checkpoint, nn.Checkpoint, list[TrainLog]]:
    clf, log1 = train_cocr_classifier(train, validation, groups, classifier_cfg)
    system, log2 = train_cocr_joint(baseline_ckpt, clf, train, validation, joint_cfg)
    return clf, system, [log1, log2]
