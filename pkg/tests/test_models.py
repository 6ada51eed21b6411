import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgocr import nn
from fgocr.data import FontGroup
from fgocr.models import (
    BASELINE,
    Charset,
    CocrClassifier,
    ColumnClassifier,
    ModelRegistry,
    OcrModel,
    RegistryError,
    backbone_configs,
    column_index,
    downscale_labels,
    init_finetune,
    load_model,
    ocr_forward,
    output_length,
    prepare_batch,
    sequence_length,
    step_index,
)
from fgocr.nn.optim import AdamState

GROUPS = (FontGroup.ANTIQUA, FontGroup.FRAKTUR)


def test_sequence_length_examples():
    assert sequence_length(128) == 31
    assert sequence_length(6) == 1
    assert output_length(128) == 31


@settings(max_examples=60, deadline=None)
@given(st.integers(6, 3000))
def test_layer_table_length_matches_formula(w):
    assert output_length(w, backbone_configs()) == (w - 2) // 4


def test_ocr_forward_shapes_and_errors():
    model = OcrModel(Charset("abc"), seed=0)
    rng = np.random.default_rng(0)
    for w in (6, 7, 50, 129):
        out = ocr_forward(model, rng.random((32, w)).astype(np.float32))
        assert out.shape == ((w - 2) // 4, 4)
    with pytest.raises(ValueError):
        ocr_forward(model, np.ones((30, 40)))
    with pytest.raises(ValueError):
        prepare_batch([np.ones((32, 5))])


def test_padding_does_not_leak_into_shorter_lines():
    model = OcrModel(Charset("ab"), seed=1)
    rng = np.random.default_rng(1)
    short, long = rng.random((32, 60)), rng.random((32, 140))
    alone = model.run([short])[0]
    batched = model.run([short, long])[0]
    # only the last few steps see the padded neighbourhood
    np.testing.assert_allclose(alone[:-3], batched[: len(alone) - 3], atol=1e-3)


def test_charset_roundtrip():
    cs = Charset.from_texts(["ba c", "ab"])
    assert cs.to_string() == " abc" and cs.num_classes == 5
    assert cs.decode(cs.encode("cab?")) == "cab"


def test_column_and_step_maps():
    assert column_index(200, 49)[0] == 0 and column_index(200, 49)[-1] == 48
    # nearest-index maps are monotone and cover every step
    idx = column_index(123, 30)
    assert np.all(np.diff(idx) >= 0) and set(idx.tolist()) == set(range(30))
    labels = np.array([0] * 100 + [1] * 100)
    steps = downscale_labels(labels, 49)
    assert len(steps) == 49 and int((steps == 0).sum()) in (24, 25)
    assert np.all(step_index(49, 200) < 200)


def test_column_classifier_emits_one_vector_per_column():
    clf = ColumnClassifier(GROUPS, seed=0)
    rng = np.random.default_rng(2)
    ims = [rng.random((32, w)).astype(np.float32) for w in (40, 97)]
    cols = clf.classify_columns(ims)
    assert [c.shape for c in cols] == [(40, 2), (97, 2)]
    np.testing.assert_allclose(cols[1].sum(axis=1), 1.0, atol=1e-5)
    steps = clf.scores([ims[1]])[0]
    assert np.array_equal(clf.classify_columns([ims[1]])[0], steps[column_index(97, len(steps))])


def test_checkpoint_roundtrip_gives_identical_outputs(tmp_path):
    rng = np.random.default_rng(3)
    im = rng.random((32, 80)).astype(np.float32)
    for model in (OcrModel(Charset("xyz"), seed=4), CocrClassifier(GROUPS, seed=5), ColumnClassifier(GROUPS, seed=6)):
        path = nn.save_checkpoint(tmp_path / f"{model.kind}.ckpt", model.checkpoint())
        back = load_model(path)
        assert type(back) is type(model)
        assert np.array_equal(back.run([im])[0], model.run([im])[0])
        assert nn.checkpoint.to_bytes(back.checkpoint()) == path.read_bytes()


def test_init_finetune_restores_adam_state():
    model = OcrModel(Charset("ab"), seed=0)
    params = model.state_dict()
    st = AdamState(lr=2.5e-4, step=42, m={k: np.ones_like(v) for k, v in params.items()},
                   v={k: np.full_like(v, 2.0) for k, v in params.items()})
    ft, state = init_finetune(model.checkpoint(st))
    assert state.step == 42 and state.lr == 2.5e-4
    name = next(iter(params))
    assert np.array_equal(state.v[name], st.v[name]) and state.m[name] is not st.m[name]
    assert all(np.array_equal(ft.state_dict()[k], params[k]) for k in params)
    with pytest.raises(nn.CheckpointError):
        init_finetune(model.checkpoint(None))
    with pytest.raises(nn.CheckpointError):
        init_finetune(CocrClassifier(GROUPS).checkpoint(st))


def test_registry_roundtrip_and_errors(tmp_path):
    path = nn.save_checkpoint(tmp_path / "m" / "base.ckpt", OcrModel(Charset("ab")).checkpoint())
    reg = ModelRegistry()
    reg.set(BASELINE, path)
    reg.set("font:Fraktur", tmp_path / "m" / "missing.ckpt")
    manifest = reg.save(tmp_path / "m" / "registry.ini")
    assert "baseline = base.ckpt" in manifest.read_text()
    back = ModelRegistry.load(manifest)
    assert isinstance(back.get(BASELINE), OcrModel)
    assert back.missing([BASELINE, "font:Fraktur", "classifier"]) == ["font:Fraktur", "classifier"]
    with pytest.raises(RegistryError):
        back.font_model(FontGroup.FRAKTUR)
    with pytest.raises(RegistryError):
        back.get("classifier")
