import json

import pytest

from fgocr.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from fgocr.commands import Workspace, load_part, read_tsv, write_tsv
from fgocr.config import ConfigError, RunConfig
from fgocr.data.samples import line_key

TINY = """\
[run]
seed = 5

[data]
groups = Antiqua, Fraktur
books_per_group = 4
lines_per_book = 5
min_length = 3
max_length = 10
test_min_chars = 20
val_min_chars = 20
split_trials = 20
augment_copies = 1

[train]
max_epochs = 1
patience = 2
lr_halving_patience = 1
max_batches_per_epoch = 2
batch_size = 4
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY)
    work = root / "run"
    base = ["--config", str(cfg), "--workdir", str(work)]
    for cmd in (["generate"], ["split"], ["augment"], ["train"], ["finetune", "all"], ["train-classifier", "--kind", "column"], ["train-classifier", "--kind", "cocr"]):
        assert main([cmd[0], *base, *cmd[1:]]) == EXIT_OK, cmd
    return base, work


def test_usage_errors_exit_1(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["generate", "--set", "data.no_such_key=1"]) == EXIT_USAGE
    assert "unknown key" in capsys.readouterr().err


def test_missing_prerequisite_exits_2(tmp_path, capsys):
    assert main(["ocr", "--workdir", str(tmp_path / "empty"), "--system", "baseline"]) == EXIT_DATA
    assert "fgocr train" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.ini")]) == EXIT_DATA


def test_config_rejects_unknown_section_and_bad_value():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.override("nosuch.key=1")
    with pytest.raises(ConfigError):
        cfg.override("train.batch_size=many")
    cfg.override("train.finetune.max_epochs=3")
    assert cfg.train_config("train.finetune").max_epochs == 3
    assert cfg.train_config("train.column").batch_size == 1


def test_config_digest_tracks_values():
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest()
    b.set("run", "seed", 9)
    assert a.digest() != b.digest()


def test_config_env_var(tmp_path, monkeypatch):
    path = tmp_path / "env.ini"
    path.write_text("[run]\nseed = 77\n")
    monkeypatch.setenv("FGOCR_CONFIG", str(path))
    assert RunConfig.load().seed == 77


def test_pipeline_outputs_and_manifests(tiny_run):
    _, work = tiny_run
    ws = Workspace(work)
    for role in ("baseline", "column_classifier", "classifier"):
        assert role in ws.registry.read_text()
    manifest = json.loads((ws.manifests / "train.json").read_text())
    assert manifest["seed"] == 5 and len(manifest["config_sha256"]) == 64


def test_refuses_to_overwrite_without_force(tiny_run, capsys):
    base, _ = tiny_run
    assert main(["generate", *base]) == EXIT_DATA
    assert "--force" in capsys.readouterr().err


def test_ocr_and_evaluate(tiny_run, tmp_path, capsys):
    base, work = tiny_run
    ws = Workspace(work)
    for system in ("baseline", "selocr", "splitocr", "cocr"):
        out = tmp_path / f"{system}.tsv"
        assert main(["ocr", *base, "--system", system, "--output", str(out)]) == EXIT_OK
        assert len(read_tsv(out)) == len(load_part(ws, "test"))
    truth = write_tsv(tmp_path / "truth.tsv", [(line_key(s), s.transcript) for s in load_part(ws, "test")])
    prefix = tmp_path / "report"
    capsys.readouterr()
    assert main(["evaluate", *base, "--hypotheses", f"truth={truth}", "--output", str(prefix)]) == EXIT_OK
    report = json.loads(prefix.with_suffix(".json").read_text())
    assert report["reports"][0]["subsets"]["All"]["cer"] == 0.0
    assert "truth" in capsys.readouterr().out


def test_evaluate_rejects_misaligned_ids(tiny_run, tmp_path, capsys):
    base, _ = tiny_run
    bad = write_tsv(tmp_path / "bad.tsv", [("nobody/0000", "x")])
    assert main(["evaluate", *base, "--hypotheses", str(bad), "--output", str(tmp_path / "r")]) == EXIT_DATA
    assert "do not align" in capsys.readouterr().err


def test_ocr_is_deterministic(tiny_run, tmp_path):
    base, _ = tiny_run
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert main(["ocr", *base, "--system", "cocr", "--theta", "0.1", "--output", str(a)]) == EXIT_OK
    assert main(["ocr", *base, "--system", "cocr", "--theta", "0.1", "--jobs", "3", "--output", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_stage_precedence():
    cfg = RunConfig()
    assert cfg.train_config("train.baseline").batch_size == 8
    cfg.override("train.max_epochs=2")
    assert cfg.train_config("train.baseline").max_epochs == 2  # user [train] beats built-in stage default
    cfg.override("train.baseline.max_epochs=4")
    assert cfg.train_config("train.baseline").max_epochs == 4
    assert cfg.train_config("train.finetune").max_epochs == 2
    cfg.override("train.batch_size=16")
    assert cfg.train_config("train.column").batch_size == 1
    cfg.override("train.column.batch_size=2")
    assert cfg.train_config("train.column").batch_size == 2  # rejected later by the column trainer
