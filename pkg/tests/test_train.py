import numpy as np
import pytest

from fgocr import nn
from fgocr.ctc import ctc_loss_tensor
from fgocr.data import FontGroup, SynthConfig, generate_synthetic_book
from fgocr.models import Charset, CocrClassifier, CocrSystem, OcrModel, prepare_batch
from fgocr.nn.tensor import Tensor
from fgocr.train import (
    PlateauSchedule,
    TrainConfig,
    TrainingError,
    batch_order,
    cross_entropy,
    finetune_group,
    fit,
    fused_log_probs,
    group_lines,
    train_baseline,
    train_cocr_joint,
    train_column_classifier,
)

SMALL = SynthConfig(max_length=5, multi_group_fraction=0.5)
QUICK = TrainConfig(batch_size=4, max_epochs=1, max_batches_per_epoch=2, patience=3, lr_halving_patience=1)


@pytest.fixture(scope="module")
def lines():
    groups = (FontGroup.ANTIQUA, FontGroup.FRAKTUR)
    out = []
    for k, g in enumerate(groups):
        out += generate_synthetic_book(g, 6, charset="abc", seed=k, other_groups=groups, cfg=SMALL)
    return out


def run_schedule(metrics, patience=20, halving=5):
    sched = PlateauSchedule(patience, halving)
    return [sched.update(e, m) for e, m in enumerate(metrics)]


def test_schedule_halves_once_after_five_flat_epochs():
    trace = run_schedule([10, 9, 9, 9, 9, 9, 9])
    halvings = [e for e, (_, h, _) in enumerate(trace) if h]
    assert halvings == [6]
    assert [imp for imp, _, _ in trace] == [True, True] + [False] * 5


def test_schedule_improvement_is_strict_and_stops_at_patience():
    trace = run_schedule([5.0] * 10, patience=6, halving=2)
    stops = [e for e, (_, _, s) in enumerate(trace) if s]
    assert stops[0] == 6
    assert [e for e, (_, h, _) in enumerate(trace) if h][:3] == [2, 4, 6]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=5, lr_halving_patience=5)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=-1)
    assert TrainConfig().replace(seed=3).seed == 3


def test_batch_order_covers_every_item_once():
    widths = np.random.default_rng(0).integers(20, 400, size=37)
    batches = batch_order(widths, 8, seed=1, epoch=2)
    assert sorted(np.concatenate(batches).tolist()) == list(range(37))
    assert [b.tolist() for b in batches] == [b.tolist() for b in batch_order(widths, 8, seed=1, epoch=2)]


class Counter:
    """Tiny model: one scalar parameter, metric is whatever the test feeds."""

    def __init__(self):
        self.w = Tensor(np.array([1.0]), requires_grad=True)

    def named_parameters(self):
        return [("w", self.w)]

    def checkpoint(self, optimizer=None, meta=None):
        return nn.Checkpoint({"w": self.w.data.copy()}, optimizer, meta or {})


def test_zero_epochs_returns_start_point():
    m = Counter()
    ck, log = fit(m, lambda idx, e: (m.w * m.w).sum(), [1, 2, 3], lambda: 0.5, TrainConfig(max_epochs=0))
    assert np.array_equal(ck.params["w"], [1.0]) and log.epochs == 0


def test_non_finite_loss_aborts_with_batch():
    m = Counter()
    with pytest.raises(TrainingError, match="batch 0"):
        fit(m, lambda idx, e: (m.w * np.nan).sum(), [1, 2], lambda: 0.5, TrainConfig(batch_size=1, max_epochs=1))


def test_best_checkpoint_keeps_best_epoch():
    m = Counter()
    metrics = iter([1.0, 0.5, 0.7, 0.9])
    ck, log = fit(
        m, lambda idx, e: (m.w * m.w).sum(), [1], lambda: next(metrics),
        TrainConfig(batch_size=1, max_epochs=3, patience=3, lr_halving_patience=1),
    )
    assert log.best_epoch == 1
    assert ck.optimizer.step == 1


def test_baseline_training_is_deterministic(lines):
    a, log_a = train_baseline(lines[:8], lines[8:], QUICK)
    b, log_b = train_baseline(lines[:8], lines[8:], QUICK)
    assert nn.checkpoint.to_bytes(a) == nn.checkpoint.to_bytes(b)
    assert log_a.deterministic() == log_b.deterministic()


def test_finetune_requires_group_lines_and_optimizer(lines):
    ck, _ = train_baseline(lines[:8], lines[8:], QUICK.replace(max_epochs=0))
    with pytest.raises(TrainingError):
        finetune_group(ck, lines, lines, [FontGroup.TEXTURA], QUICK)
    bare = nn.Checkpoint(ck.params, None, ck.meta)
    with pytest.raises(nn.CheckpointError):
        finetune_group(bare, lines, lines, [FontGroup.ANTIQUA], QUICK)
    single = group_lines(lines, [FontGroup.ANTIQUA])
    assert single and all(s.groups == [FontGroup.ANTIQUA] for s in single)


def test_finetune_zero_epochs_is_identity(lines):
    ck, _ = train_baseline(lines[:8], lines[8:], QUICK)
    ft, _ = finetune_group(ck, lines, lines, [FontGroup.ANTIQUA], QUICK.replace(max_epochs=0))
    for k in ck.params:
        assert np.array_equal(ft.params[k], ck.params[k])
    assert ft.optimizer.step == ck.optimizer.step


def test_column_classifier_needs_batch_size_one(lines):
    with pytest.raises(ValueError):
        train_column_classifier(lines, lines, [FontGroup.ANTIQUA, FontGroup.FRAKTUR], TrainConfig(batch_size=2))


def test_cross_entropy_zero_for_confident_correct_scores():
    targets = np.array([1, 0, 2])
    logits = np.full((1, 3, 3), -50.0)
    logits[0, np.arange(3), targets] = 50.0
    loss = cross_entropy(Tensor(logits, dtype=np.float64), np.zeros(3, int), np.arange(3), targets)
    assert float(loss.data) < 1e-12


def _system(seed=0):
    groups = (FontGroup.ANTIQUA, FontGroup.FRAKTUR)
    cs = Charset("abc")
    branches = {g: OcrModel(cs, seed=seed + k, dtype=np.float64) for k, g in enumerate(groups)}
    return CocrSystem(branches, CocrClassifier(groups, seed=seed + 5, dtype=np.float64))


def test_joint_loss_reaches_every_part(lines):
    system = _system()
    x, widths = prepare_batch([s.image for s in lines[:3]])
    lp, lengths = fused_log_probs(system, x, widths)
    labels = [system.charset.encode(s.transcript) for s in lines[:3]]
    ctc_loss_tensor(lp, labels, lengths).backward()
    for name, p in system.named_parameters():
        if name.endswith("weight"):
            assert np.abs(p.grad).max() > 0, name


def test_one_hot_routing_trains_only_the_selected_branch(lines):
    system = _system(1)
    x, widths = prepare_batch([s.image for s in lines[:2]])
    t = int(system.classifier.lengths(widths).max())
    w = np.zeros((2, t, 2))
    w[..., 1] = 1.0
    lp, lengths = fused_log_probs(system, x, widths, Tensor(w, dtype=np.float64))
    labels = [system.charset.encode(s.transcript) for s in lines[:2]]
    ctc_loss_tensor(lp, labels, lengths).backward()
    for name, p in system.named_parameters():
        g = 0.0 if p.grad is None else np.abs(p.grad).max()
        if name.startswith("branch_FRAKTUR") and name.endswith("weight"):
            assert g > 0, name
        elif name.startswith("branch_ANTIQUA") or name.startswith("classifier"):
            assert g == 0, name


def test_joint_training_needs_classifier(lines):
    ck, _ = train_baseline(lines[:8], lines[8:], QUICK.replace(max_epochs=0))
    with pytest.raises(TrainingError):
        train_cocr_joint(ck, None, lines, lines, QUICK)
