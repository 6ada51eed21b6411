"""Run configuration: an INI file with a fixed schema, plus flag overrides.

Sections and keys are validated against :data:`SCHEMA`; anything unknown
is rejected so that typos cannot silently fall back to defaults.  Training
sections inherit from ``[train]``::

    [run]
    seed = 0
    workdir = runs/desk

    [train]
    batch_size = 32

    [train.finetune]
    max_epochs = 6
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
import os
from dataclasses import fields
from pathlib import Path
from typing import Any

from .data.fonts import FontGroup
from .train import TrainConfig

ENV_CONFIG = "FGOCR_CONFIG"


class ConfigError(ValueError):
    """Malformed configuration: unknown section or key, or a value of the wrong type."""


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optional_int(v: str) -> int | None:
    return None if str(v).strip().lower() in ("", "none") else int(v)


def _groups(v: str) -> tuple[FontGroup, ...]:
    out = tuple(FontGroup.parse(g) for g in str(v).split(",") if g.strip())
    if not out:
        raise ValueError("empty group list")
    return out


_TRAIN_KEYS = {
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "initial_lr": float,
    "lr_halving_patience": int,
    "max_batches_per_epoch": _optional_int,
    "runtime_augmentation": _bool,
}
TRAIN_SECTIONS = ("train.baseline", "train.finetune", "train.classifier", "train.column", "train.joint")

SCHEMA: dict[str, dict[str, Any]] = {
    "run": {"seed": int, "jobs": int, "workdir": str},
    "data": {
        "groups": _groups,
        "charset": str,
        "books_per_group": int,
        "lines_per_book": int,
        "min_length": int,
        "max_length": int,
        "multi_group_fraction": float,
        "test_min_chars": int,
        "val_min_chars": int,
        "split_trials": int,
        "augment_copies": int,
    },
    "train": dict(_TRAIN_KEYS),
    **{s: dict(_TRAIN_KEYS) for s in TRAIN_SECTIONS},
    "ocr": {"system": str, "theta": float},
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": 0, "jobs": 1, "workdir": "fgocr-run"},
    "data": {
        "groups": (FontGroup.ANTIQUA, FontGroup.ITALIC, FontGroup.FRAKTUR, FontGroup.TEXTURA),
        "charset": "abcdefghijklmnopqrstuvwxyz .,-",
        "books_per_group": 7,
        "lines_per_book": 30,
        "min_length": 1,
        "max_length": 80,
        "multi_group_fraction": 0.2,
        "test_min_chars": 2000,
        "val_min_chars": 700,
        "split_trials": 200,
        "augment_copies": 2,
    },
    # Desk-scale budgets.  TrainConfig itself keeps the full-scale recipe
    # (batch 32, 1000 epochs, patience 20, halving after 5).
    "train": {"batch_size": 8, "patience": 5, "lr_halving_patience": 3},
    # validation CER sits at 1.0 through the early CTC plateau (about 5
    # epochs here), so the baseline keeps the full-scale patience values
    "train.baseline": {"max_epochs": 20, "patience": 20, "lr_halving_patience": 5},
    "train.finetune": {"max_epochs": 6, "patience": 3, "lr_halving_patience": 2},
    "train.classifier": {"max_epochs": 8},
    "train.column": {"max_epochs": 8},
    "train.joint": {"max_epochs": 3},
    "ocr": {"system": "cocr", "theta": 0.0},
}


class RunConfig:
    """Typed view of a validated configuration."""

    def __init__(self, values: dict[str, dict[str, Any]] | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        self.explicit: set[tuple[str, str]] = set()
        for section, items in (values or {}).items():
            for key, value in items.items():
                self.set(section, key, value)

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        cfg = cls()
        for section in cp.sections():
            for key, raw in cp[section].items():
                cfg.set(section, key, raw)
        return cfg

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        """From ``path``, else from ``$FGOCR_CONFIG`` if set, else the defaults."""
        path = path or os.environ.get(ENV_CONFIG)
        return cls.from_file(path) if path else cls()

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        conv = SCHEMA[section][key]
        try:
            self.values[section][key] = value if not isinstance(value, str) else conv(value.strip())
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[{section}] {key}: {e}") from None
        self.explicit.add((section, key))

    def override(self, assignment: str) -> None:
        """Apply a ``section.key=value`` override (the section may itself contain a dot)."""
        if "=" not in assignment:
            raise ConfigError(f"override must look like section.key=value, got {assignment!r}")
        target, value = assignment.split("=", 1)
        section, _, key = target.strip().rpartition(".")
        if not section:
            raise ConfigError(f"override must name a section: {assignment!r}")
        self.set(section, key, value)

    # -- accessors ------------------------------------------------------------

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def jobs(self) -> int:
        return max(1, int(self.values["run"]["jobs"]))

    @property
    def groups(self) -> tuple[FontGroup, ...]:
        return tuple(self.values["data"]["groups"])

    def _user(self, section: str) -> dict[str, Any]:
        return {k: v for k, v in self.values[section].items() if (section, k) in self.explicit}

    def train_config(self, section: str) -> TrainConfig:
        """TrainConfig for one stage.

        Precedence, lowest first: built-in ``[train]`` defaults, built-in
        stage defaults, the user's ``[train]``, the user's stage section.
        """
        if section not in TRAIN_SECTIONS:
            raise ConfigError(f"unknown training stage {section!r}")
        kw = {**DEFAULTS["train"], **DEFAULTS[section], **self._user("train"), **self._user(section), "seed": self.seed}
        if section == "train.column":
            # one line per update unless the stage itself says otherwise
            kw["batch_size"] = self._user(section).get("batch_size", 1)
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in kw.items() if k in names})

    def to_dict(self) -> dict:
        out = {}
        for section, items in self.values.items():
            out[section] = {
                k: ([g.label for g in v] if k == "groups" else v) for k, v in sorted(items.items())
            }
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; recorded in every run manifest."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for section, items in self.to_dict().items():
            if not items:
                continue
            lines.append(f"[{section}]")
            for k, v in items.items():
                v = ",".join(v) if isinstance(v, list) else ("none" if v is None else v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)
