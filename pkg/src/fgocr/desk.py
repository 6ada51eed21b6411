"""Desk-scale end-to-end run on the synthetic four-group corpus.

generate -> split -> augment -> baseline -> per-group fine-tuning ->
column classifier -> COCR classifier -> transcription with every system ->
subset and length-bin reports.  Everything is seeded, so two runs with the
same config produce identical checkpoints, transcripts and reports.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .commands import (
    ORACLE_SELOCR,
    Evaluation,
    Workspace,
    cmd_augment,
    cmd_evaluate,
    cmd_finetune,
    cmd_generate,
    cmd_ocr,
    cmd_split,
    cmd_train,
    cmd_train_classifier,
    evaluate,
    load_part,
    ocr_name,
    read_tsv,
)
from .config import RunConfig
from .train import TrainLog

log = logging.getLogger(__name__)

GATE_THETA = 0.1


def desk_config(workdir=None, seed: int = 0) -> RunConfig:
    """The default desk-scale configuration (about 1,500 augmented training lines)."""
    cfg = RunConfig()
    cfg.set("run", "seed", seed)
    if workdir is not None:
        cfg.set("run", "workdir", str(workdir))
    return cfg


@dataclass
class DeskResult:
    workdir: Path
    evaluation: Evaluation
    baseline_val_cer: float
    timings: dict[str, float] = field(default_factory=dict)

    def report(self, system: str):
        return next(r for r in self.evaluation.reports if r.system == system)

    def summary(self) -> str:
        lines = [f"baseline validation CER {100 * self.baseline_val_cer:.2f}%", "", self.evaluation.table()]
        lines.append("time per stage (s): " + ", ".join(f"{k} {v:.0f}" for k, v in self.timings.items()))
        return "\n".join(lines) + "\n"


def desk_systems(cfg: RunConfig) -> list[tuple[str, float]]:
    """``(selector, theta)`` pairs transcribed by the desk run, in report order."""
    fonts = [(f"font:{g.label}", 0.0) for g in cfg.groups]
    return (
        [("baseline", 0.0)]
        + fonts
        + [("selocr", 0.0), (ORACLE_SELOCR, 0.0), ("splitocr", 0.0), ("cocr", 0.0), ("cocr", GATE_THETA)]
    )


def system_label(selector: str, theta: float) -> str:
    return selector + (f" (theta={theta:g})" if theta else "")


def baseline_validation_cer(ws: Workspace) -> float:
    records = [json.loads(line) for line in (ws.logs / "baseline.jsonl").read_text().splitlines() if line]
    return min(r["metric"] for r in records)


def run_desk(cfg: RunConfig, ws: Workspace, force: bool = True) -> DeskResult:
    timings: dict[str, float] = {}

    def stage(name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        timings[name] = time.perf_counter() - t0
        log.info("desk stage %s done in %.1f s", name, timings[name])
        return out

    stage("generate", cmd_generate, cfg, ws, force)
    stage("split", cmd_split, cfg, ws, force)
    stage("augment", cmd_augment, cfg, ws, force)
    stage("baseline", cmd_train, cfg, ws, force)
    for g in cfg.groups:
        stage(f"finetune:{g.label}", cmd_finetune, cfg, ws, g.label, force)
    stage("column_classifier", cmd_train_classifier, cfg, ws, "column", force)
    stage("cocr_classifier", cmd_train_classifier, cfg, ws, "cocr", force)
    hyps = []
    t0 = time.perf_counter()
    for selector, theta in desk_systems(cfg):
        path = cmd_ocr(cfg, ws, system=selector, theta=theta, force=force)
        hyps.append((system_label(selector, theta), path))
    timings["ocr"] = time.perf_counter() - t0
    evaluation = stage("evaluate", cmd_evaluate, cfg, ws, hyps, force=force)
    ws.root.joinpath("timings.json").write_text(json.dumps(timings, indent=1) + "\n", encoding="utf-8")
    return DeskResult(ws.root, evaluation, baseline_validation_cer(ws), timings)


def load_desk(cfg: RunConfig, ws: Workspace) -> DeskResult:
    """Re-evaluate the transcripts of a finished desk run without touching its files."""
    hyps = {
        system_label(selector, theta): read_tsv(ws.ocr / f"{ocr_name(selector, theta)}.tsv")
        for selector, theta in desk_systems(cfg)
    }
    evaluation = evaluate(load_part(ws, "test"), hyps)
    timings = json.loads(ws.root.joinpath("timings.json").read_text(encoding="utf-8"))
    return DeskResult(ws.root, evaluation, baseline_validation_cer(ws), timings)


def training_log(ws: Workspace, name: str) -> TrainLog:
    """Reload a stage's per-epoch log (e.g. ``baseline``, ``font-antiqua``)."""
    from .train import EpochRecord

    records = []
    for line in (ws.logs / f"{name}.jsonl").read_text().splitlines():
        d = json.loads(line)
        d.pop("run", None)
        records.append(EpochRecord(**d))
    return TrainLog(name, records)
