"""Batch steps behind the command-line interface.

Every step works inside a run directory (the *workspace*) with a fixed
layout, checks that the artifacts of earlier steps exist, and writes a
JSON manifest recording the config digest and seed::

    data/            generated books, one directory per book
    split.json       book-level train/validation/test split
    train_aug/       training books with offline augmentation (3x lines)
    models/          checkpoints and registry.ini
    logs/            per-epoch training logs (JSON lines)
    ocr/             transcripts, one TSV per system
    reports/         CER tables and length-bin reports
    manifests/       one JSON file per executed step
"""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from . import __version__, nn
from .config import RunConfig
from .data import (
    DatasetSplit,
    FontGroup,
    LineSample,
    SynthConfig,
    augment_dataset,
    book_char_counts,
    build_splits,
    generate_synthetic_book,
    line_key,
    load_dataset,
    preprocess,
    save_dataset,
)
from .data.fonts import GOTHIC, ROMAN
from .evaluation import CerReport, LengthBinReport, format_table, length_bin_report, subset_report
from .models import (
    BASELINE,
    CLASSIFIER,
    COCR,
    COLUMN_CLASSIFIER,
    GOTHIC_ROLE,
    ROMAN_ROLE,
    Charset,
    ModelRegistry,
    font_role,
)
from .pipelines import parse_system, required_roles, run_selocr_oracle, system_runner, transcribe
from .train import (
    finetune_group,
    train_baseline,
    train_cocr_classifier,
    train_cocr_joint,
    train_column_classifier,
)

log = logging.getLogger(__name__)

ORACLE_SELOCR = "selocr-oracle"


class ContractError(RuntimeError):
    """A prerequisite is missing or inputs do not fit together (exit code 2)."""


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def split(self) -> Path:
        return self.root / "split.json"

    @property
    def augmented(self) -> Path:
        return self.root / "train_aug"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def registry(self) -> Path:
        return self.models / "registry.ini"

    @property
    def logs(self) -> Path:
        return self.root / "logs"

    @property
    def ocr(self) -> Path:
        return self.root / "ocr"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def manifests(self) -> Path:
        return self.root / "manifests"


def workspace(cfg: RunConfig, override=None) -> Workspace:
    return Workspace(Path(override or cfg["run"]["workdir"]))


def _require(path: Path, step: str) -> Path:
    if not path.exists():
        raise ContractError(f"{path} is missing; run `fgocr {step}` first")
    return path


def _fresh_dir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ContractError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fresh_file(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise ContractError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    return path


def write_manifest(ws: Workspace, name: str, cfg: RunConfig, outputs: Iterable, extra: dict | None = None) -> Path:
    ws.manifests.mkdir(parents=True, exist_ok=True)
    root = ws.root.resolve()
    outs = []
    for p in outputs:
        p = Path(p).resolve()
        outs.append(str(p.relative_to(root)) if p.is_relative_to(root) else str(p))
    body = {
        "step": name,
        "version": __version__,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "outputs": outs,
    }
    if extra:
        body.update(extra)
    path = ws.manifests / f"{name.replace(':', '-')}.json"
    path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- data ---------------------------------------------------------------------


def synth_config(cfg: RunConfig) -> SynthConfig:
    d = cfg["data"]
    return SynthConfig(
        min_length=d["min_length"], max_length=d["max_length"], multi_group_fraction=d["multi_group_fraction"]
    )


def group_char_totals(samples: Iterable[LineSample]) -> dict[str, int]:
    tot: dict[str, int] = {}
    for counts in book_char_counts(samples).values():
        for g, n in counts.items():
            tot[g.label] = tot.get(g.label, 0) + n
    return dict(sorted(tot.items()))


def cmd_generate(cfg: RunConfig, ws: Workspace, force: bool = False) -> dict[str, int]:
    """Render the synthetic corpus; returns the per-group character totals."""
    d = cfg["data"]
    groups = cfg.groups
    _fresh_dir(ws.data, force)
    scfg = synth_config(cfg)
    jobs = [(k, g, b) for k, g in enumerate(groups) for b in range(d["books_per_group"])]

    def one(job):
        k, g, b = job
        return generate_synthetic_book(
            g,
            d["lines_per_book"],
            charset=d["charset"],
            seed=_seed(cfg.seed, k, b),
            book_id=f"{g.label.lower()}-{b:02d}",
            other_groups=groups,
            cfg=scfg,
        )

    books = _map(one, jobs, cfg.jobs)
    lines = [s for book in books for s in book]
    save_dataset(lines, ws.data)
    totals = group_char_totals(lines)
    need = d["test_min_chars"] + d["val_min_chars"]
    short = {g.label: totals.get(g.label, 0) for g in groups if totals.get(g.label, 0) < need}
    if short:
        raise ContractError(f"generated corpus has fewer than {need} characters for {short}; add books or lines")
    write_manifest(ws, "generate", cfg, [ws.data], {"books": len(books), "lines": len(lines), "group_chars": totals})
    return totals


def cmd_split(cfg: RunConfig, ws: Workspace, force: bool = False) -> DatasetSplit:
    d = cfg["data"]
    samples = load_dataset(_require(ws.data, "generate"))
    _fresh_file(ws.split, force)
    split = build_splits(
        book_char_counts(samples),
        min_chars_per_group=d["test_min_chars"],
        n_trials=d["split_trials"],
        seed=cfg.seed,
        min_val_chars=d["val_min_chars"],
        groups=cfg.groups,
    )
    split.save(ws.split)
    write_manifest(ws, "split", cfg, [ws.split], {"books": {k: split.books(k) for k in ("train", "validation", "test")}})
    return split


def load_split(ws: Workspace) -> DatasetSplit:
    return DatasetSplit.load(_require(ws.split, "split"))


def load_part(ws: Workspace, part: str) -> list[LineSample]:
    """Lines of one split part from the original (unaugmented) corpus."""
    split = load_split(ws)
    return load_dataset(_require(ws.data, "generate"), split.books(part))


def cmd_augment(cfg: RunConfig, ws: Workspace, force: bool = False) -> int:
    """Preprocess the training books and add ``augment_copies`` augmented variants of every line."""
    split = load_split(ws)
    _require(ws.data, "generate")
    _fresh_dir(ws.augmented, force)
    copies = cfg["data"]["augment_copies"]

    def one(item):
        k, book = item
        lines = [preprocess(s) for s in load_dataset(ws.data, [book])]
        return augment_dataset(lines, seed=_seed(cfg.seed, 0xA06, k), copies=copies)

    books = _map(one, list(enumerate(split.train)), cfg.jobs)
    n = save_dataset([s for b in books for s in b], ws.augmented)
    write_manifest(ws, "augment", cfg, [ws.augmented], {"lines": n})
    return n


def load_training(ws: Workspace) -> list[LineSample]:
    return load_dataset(_require(ws.augmented, "augment"))


# -- training -----------------------------------------------------------------


def _registry(ws: Workspace) -> ModelRegistry:
    return ModelRegistry.load(ws.registry) if ws.registry.exists() else ModelRegistry()


def _register(ws: Workspace, role: str, path: Path) -> None:
    reg = _registry(ws)
    reg.set(role, path)
    reg.save(ws.registry)


def _log_path(ws: Workspace, name: str) -> Path:
    ws.logs.mkdir(parents=True, exist_ok=True)
    path = ws.logs / f"{name}.jsonl"
    if path.exists():
        path.unlink()
    return path


def cmd_train(cfg: RunConfig, ws: Workspace, force: bool = False) -> Path:
    """Baseline recognizer from random weights on all augmented training lines."""
    train = load_training(ws)
    val = load_part(ws, "validation")
    out = _fresh_file(ws.models / "baseline.ckpt", force)
    charset = Charset(cfg["data"]["charset"])
    ckpt, tlog = train_baseline(train, val, cfg.train_config("train.baseline"), charset, _log_path(ws, "baseline"))
    nn.save_checkpoint(out, ckpt)
    _register(ws, BASELINE, out)
    write_manifest(ws, "train", cfg, [out], {"best_epoch": tlog.best_epoch, "best_val_cer": tlog.best_metric})
    return out


FINETUNE_TARGETS = {"gothic": (GOTHIC_ROLE, GOTHIC), "roman": (ROMAN_ROLE, ROMAN)}


def finetune_target(name: str) -> tuple[str, list[FontGroup]]:
    """Role and group set for ``<group> | gothic | roman``."""
    key = name.strip().lower()
    if key in FINETUNE_TARGETS:
        role, groups = FINETUNE_TARGETS[key]
        return role, sorted(groups)
    g = FontGroup.parse(name)
    return font_role(g), [g]


def cmd_finetune(cfg: RunConfig, ws: Workspace, target: str, force: bool = False) -> Path:
    """Continue the baseline (weights and optimizer state) on one group or super-group."""
    role, groups = finetune_target(target)
    base = _require(ws.models / "baseline.ckpt", "train")
    train = load_training(ws)
    val = load_part(ws, "validation")
    name = role.replace("font:", "font-").lower()
    out = _fresh_file(ws.models / f"{name}.ckpt", force)
    ckpt, tlog = finetune_group(base, train, val, groups, cfg.train_config("train.finetune"), _log_path(ws, name))
    nn.save_checkpoint(out, ckpt)
    _register(ws, role, out)
    write_manifest(ws, f"finetune-{name}", cfg, [out], {"best_epoch": tlog.best_epoch, "best_val_cer": tlog.best_metric})
    return out


def cmd_train_classifier(cfg: RunConfig, ws: Workspace, kind: str = "cocr", force: bool = False) -> Path:
    """``kind``: ``cocr`` (per-step classifier), ``column`` (pixel columns) or ``joint`` (COCR second phase)."""
    train = load_training(ws)
    val = load_part(ws, "validation")
    groups = list(cfg.groups)
    if kind == "cocr":
        out = _fresh_file(ws.models / "cocr_classifier.ckpt", force)
        ckpt, tlog = train_cocr_classifier(train, val, groups, cfg.train_config("train.classifier"), _log_path(ws, "cocr_classifier"))
        role = CLASSIFIER
    elif kind == "column":
        out = _fresh_file(ws.models / "column_classifier.ckpt", force)
        ckpt, tlog = train_column_classifier(train, val, groups, cfg.train_config("train.column"), _log_path(ws, "column_classifier"))
        role = COLUMN_CLASSIFIER
    elif kind == "joint":
        base = _require(ws.models / "baseline.ckpt", "train")
        clf = _require(ws.models / "cocr_classifier.ckpt", "train-classifier --kind cocr")
        out = _fresh_file(ws.models / "cocr_system.ckpt", force)
        ckpt, tlog = train_cocr_joint(base, clf, train, val, cfg.train_config("train.joint"), _log_path(ws, "cocr_joint"))
        role = COCR
    else:
        raise ValueError(f"unknown classifier kind {kind!r}; expected cocr, column or joint")
    nn.save_checkpoint(out, ckpt)
    _register(ws, role, out)
    write_manifest(ws, f"train-classifier-{kind}", cfg, [out], {"best_epoch": tlog.best_epoch, "best_metric": tlog.best_metric})
    return out


# -- inference and evaluation -------------------------------------------------


def load_inputs(path: Path, books: Sequence[str] | None = None) -> list[tuple[str, np.ndarray]]:
    """``(id, image)`` pairs from a dataset directory or a single image file."""
    path = Path(path)
    if path.is_file():
        im = Image.open(path).convert("L")
        if im.height != 32:
            im = im.resize((max(1, round(im.width * 32 / im.height)), 32), Image.BILINEAR)
        return [(path.stem, np.asarray(im, dtype=np.float32) / 255.0)]
    if not path.is_dir():
        raise FileNotFoundError(f"input not found: {path}")
    return [(line_key(s), preprocess(s).image) for s in load_dataset(path, books)]


def write_tsv(path: Path, rows: Sequence[tuple[str, str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}\t{h}\n" for k, h in rows), encoding="utf-8")
    return path


def read_tsv(path: Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        key, sep, hyp = line.partition("\t")
        if not sep:
            raise ContractError(f"{path}:{n}: expected 'id<TAB>hypothesis'")
        out[key] = hyp
    return out


def check_registry(registry: ModelRegistry, system: str, groups: Sequence[FontGroup]) -> None:
    roles = [font_role(g) for g in groups] if system == ORACLE_SELOCR else required_roles(parse_system(system), groups)
    missing = registry.missing(roles)
    if missing:
        raise ContractError(f"registry lacks models for system {system!r}: missing roles {', '.join(missing)}")


def run_system(
    system: str,
    registry: ModelRegistry,
    samples: Sequence[LineSample] | None = None,
    inputs: Sequence[tuple[str, np.ndarray]] | None = None,
    groups: Sequence[FontGroup] = (),
    theta: float = 0.0,
    jobs: int = 1,
) -> list[tuple[str, str]]:
    """Transcribe lines with one system; returns ``(id, hypothesis)`` in input order."""
    check_registry(registry, system, groups)
    if system == ORACLE_SELOCR:
        if samples is None:
            raise ContractError("selocr-oracle needs a labelled dataset as input")
        hyps = transcribe(lambda s: run_selocr_oracle(registry, s), [preprocess(s) for s in samples], jobs)
        return [(line_key(s), h) for s, h in zip(samples, hyps)]
    if inputs is None:
        inputs = [(line_key(s), preprocess(s).image) for s in samples]
    fn = system_runner(parse_system(system), registry, theta)
    hyps = transcribe(fn, [im for _, im in inputs], jobs)
    return [(k, h) for (k, _), h in zip(inputs, hyps)]


def ocr_name(system: str, theta: float = 0.0) -> str:
    """File stem of a system's transcript, e.g. ``font-antiqua`` or ``cocr-theta0.1``."""
    return system.replace(":", "-").lower() + (f"-theta{theta:g}" if theta else "")


def cmd_ocr(
    cfg: RunConfig,
    ws: Workspace,
    system: str | None = None,
    input_path: Path | None = None,
    part: str = "test",
    registry_path: Path | None = None,
    theta: float | None = None,
    out: Path | None = None,
    force: bool = False,
) -> Path:
    system = system or cfg["ocr"]["system"]
    theta = cfg["ocr"]["theta"] if theta is None else theta
    registry = ModelRegistry.load(_require(Path(registry_path or ws.registry), "train"))
    name = ocr_name(system, theta)
    out = _fresh_file(Path(out or ws.ocr / f"{name}.tsv"), force)
    samples = None
    if input_path is None or Path(input_path).is_dir():
        root = Path(input_path) if input_path else _require(ws.data, "generate")
        books = load_split(ws).books(part) if input_path is None else None
        samples = load_dataset(root, books)
        rows = run_system(system, registry, samples=samples, groups=cfg.groups, theta=theta, jobs=cfg.jobs)
    else:
        rows = run_system(system, registry, inputs=load_inputs(Path(input_path)), groups=cfg.groups, theta=theta, jobs=cfg.jobs)
    write_tsv(out, rows)
    write_manifest(ws, f"ocr-{name}", cfg, [out], {"system": system, "theta": theta, "lines": len(rows)})
    return out


@dataclass
class Evaluation:
    reports: list[CerReport]
    bins: list[LengthBinReport]

    def table(self) -> str:
        return format_table(self.reports)

    def bins_text(self) -> str:
        return "\n".join(b.format() for b in self.bins)

    def to_json(self) -> str:
        body = {"reports": [r.to_dict() for r in self.reports], "length_bins": [b.to_dict() for b in self.bins]}
        return json.dumps(body, indent=1, sort_keys=True) + "\n"


def evaluate(samples: Sequence[LineSample], hypotheses: dict[str, dict[str, str]]) -> Evaluation:
    """Subset and length-bin reports for each ``{system: {line id: hypothesis}}``."""
    keys = {line_key(s) for s in samples}
    reports, bins = [], []
    for system, hyps in hypotheses.items():
        orphans = sorted(set(hyps) - keys)
        absent = sorted(keys - set(hyps))
        if orphans or absent:
            raise ContractError(
                f"{system}: ids do not align; {len(absent)} lines without hypothesis {absent[:5]}, "
                f"{len(orphans)} hypotheses without line {orphans[:5]}"
            )
        reports.append(subset_report(system, samples, hyps))
        bins.append(length_bin_report(system, [(hyps[line_key(s)], s.transcript) for s in samples]))
    return Evaluation(reports, bins)


def cmd_evaluate(
    cfg: RunConfig,
    ws: Workspace,
    hypotheses: Sequence[tuple[str, Path]],
    dataset: Path | None = None,
    part: str = "test",
    out_prefix: Path | None = None,
    force: bool = False,
) -> Evaluation:
    """Write ``<prefix>.txt`` (CER table), ``<prefix>.bins.txt`` and ``<prefix>.json``."""
    if dataset is None:
        samples = load_part(ws, part)
    else:
        samples = load_dataset(dataset)
    result = evaluate(samples, {name: read_tsv(path) for name, path in hypotheses})
    prefix = Path(out_prefix or ws.reports / part)
    paths = [prefix.with_suffix(".txt"), prefix.with_suffix(".bins.txt"), prefix.with_suffix(".json")]
    for p in paths:
        _fresh_file(p, force)
    paths[0].write_text(result.table(), encoding="utf-8")
    paths[1].write_text(result.bins_text(), encoding="utf-8")
    paths[2].write_text(result.to_json(), encoding="utf-8")
    write_manifest(ws, f"evaluate-{prefix.name}", cfg, paths, {"systems": [n for n, _ in hypotheses]})
    return result
