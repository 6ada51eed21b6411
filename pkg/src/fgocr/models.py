"""Line recognizer, font-group classifiers, checkpoints and the model registry.

All three networks share the convolutional front end below; they differ in
the recurrent stack and the output head.

=================  ======  =======  ======  =======  ==========
operation          kernel  outputs  stride  padding  then
=================  ======  =======  ======  =======  ==========
convolution        3x2     8        2x1     0        ReLU
convolution        6x4     32       1x1     3x1      ReLU
max pooling        4x2     -        4x2     0
convolution        3x3     64       1x1     1x1      ReLU
max pooling        1x2     -        1x2     0        ReLU
mean over height
linear                     128
BiLSTM (recognizer: 3 layers x 128, classifiers: 1 layer x 32)
linear                     classes (chars + blank) or font groups
=================  ======  =======  ======  =======  ==========

Kernel, stride and padding pairs are (height, width).  For an input of
height 32 and width W the output sequence has ``(W - 2) // 4`` steps.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .data.fonts import FontGroup
from .nn import functional as F
from .nn.layers import BiLSTM, Conv2d, LayerConfig, Linear, Module
from .nn.optim import AdamState
from .nn.tensor import Tensor, getitem, no_grad, relu, softmax

INPUT_HEIGHT = 32
MIN_WIDTH = 6


def backbone_configs() -> list[LayerConfig]:
    return [
        LayerConfig("conv2d", kernel=(3, 2), stride=(2, 1), padding=(0, 0), in_size=1, out_size=8),
        LayerConfig("relu"),
        LayerConfig("conv2d", kernel=(6, 4), stride=(1, 1), padding=(3, 1), in_size=8, out_size=32),
        LayerConfig("relu"),
        LayerConfig("maxpool2d", kernel=(4, 2), stride=(4, 2)),
        LayerConfig("conv2d", kernel=(3, 3), stride=(1, 1), padding=(1, 1), in_size=32, out_size=64),
        LayerConfig("relu"),
        LayerConfig("maxpool2d", kernel=(1, 2), stride=(1, 2)),
        # Listed after the second pooling; a no-op after the preceding ReLU.
        LayerConfig("relu"),
        LayerConfig("mean_vertical"),
    ]


def ocr_configs(num_classes: int) -> list[LayerConfig]:
    return backbone_configs() + [
        LayerConfig("linear", in_size=64, out_size=128),
        LayerConfig("bilstm", in_size=128, out_size=128, num_layers=3),
        LayerConfig("linear", in_size=256, out_size=num_classes),
    ]


def classifier_configs(num_groups: int) -> list[LayerConfig]:
    return backbone_configs() + [
        LayerConfig("linear", in_size=64, out_size=128),
        LayerConfig("bilstm", in_size=128, out_size=32, num_layers=1),
        LayerConfig("linear", in_size=64, out_size=num_groups),
        LayerConfig("softmax"),
    ]


def output_length(width: int, configs: Sequence[LayerConfig] | None = None, height: int = INPUT_HEIGHT) -> int:
    """Sequence length produced for an input of the given width, walking the layer table."""
    h, w = height, width
    for cfg in configs if configs is not None else backbone_configs():
        h, w = cfg.output_hw(h, w)
        if h < 1 or w < 1:
            return 0
    return w


def sequence_length(width: int) -> int:
    return max(0, (width - 2) // 4)


class Charset:
    """Ordered characters; class ``k`` (``k >= 1``) is ``chars[k - 1]``, class 0 is blank."""

    def __init__(self, chars: Iterable[str]):
        chars = list(dict.fromkeys(chars))
        if not chars:
            raise ValueError("charset is empty")
        self.chars = chars
        self._index = {c: i + 1 for i, c in enumerate(chars)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Charset":
        return cls(sorted({c for t in texts for c in t}))

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def num_classes(self) -> int:
        return len(self.chars) + 1

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def encode(self, text: str) -> list[int]:
        """Class indices of ``text``; characters outside the charset are dropped."""
        return [self._index[c] for c in text if c in self._index]

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.chars[k - 1] for k in indices if k > 0)

    def to_string(self) -> str:
        return "".join(self.chars)


def prepare_batch(images: Sequence[np.ndarray]) -> tuple[Tensor, np.ndarray]:
    """Stack ``(32, W)`` paper-white images into an ``(N, 32, Wmax, 1)`` ink tensor.

    Ink is ``1 - gray`` so that right padding (zeros) reads as blank paper.
    """
    widths = np.array([im.shape[1] for im in images], dtype=np.int64)
    for im in images:
        if im.shape[0] != INPUT_HEIGHT:
            raise ValueError(f"line images must be {INPUT_HEIGHT} pixels high, got {im.shape[0]}")
        if im.shape[1] < MIN_WIDTH:
            raise ValueError(f"line images must be at least {MIN_WIDTH} pixels wide, got {im.shape[1]}")
    x = np.zeros((len(images), INPUT_HEIGHT, int(widths.max()), 1), dtype=np.float32)
    for i, im in enumerate(images):
        x[i, :, : im.shape[1], 0] = 1.0 - im
    return Tensor(x), widths


class SequenceNet(Module):
    """A network given as a flat layer table, mapping line images to step sequences."""

    kind = "sequence"

    def __init__(self, configs: Sequence[LayerConfig], seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.configs = list(configs)
        self.dtype = dtype
        self.mods: list[Module | None] = []
        for i, cfg in enumerate(self.configs):
            mod: Module | None = None
            if cfg.kind == "conv2d":
                mod = Conv2d(cfg, rng, dtype)
            elif cfg.kind == "linear":
                mod = Linear(cfg.in_size, cfg.out_size, rng, dtype)
            elif cfg.kind == "bilstm":
                mod = BiLSTM(cfg.in_size, cfg.out_size, cfg.num_layers, rng, dtype)
            if mod is not None:
                self.add_module(f"l{i}_{cfg.kind}", mod)
            self.mods.append(mod)

    def lengths(self, widths) -> np.ndarray:
        return np.array([output_length(int(w), self.configs) for w in widths], dtype=np.int64)

    def forward(self, x: Tensor, widths, skip_softmax: bool = False) -> tuple[Tensor, np.ndarray]:
        """Run the table on an ``(N, 32, W, 1)`` batch; returns ``(N, T, K)`` and per-item lengths.

        ``skip_softmax`` stops before a trailing softmax so that losses can
        work on logits.
        """
        if x.shape[1] != INPUT_HEIGHT:
            raise ValueError(f"input height must be {INPUT_HEIGHT}, got {x.shape[1]}")
        lengths = self.lengths(widths)
        if np.any(lengths < 1):
            raise ValueError(f"line too narrow, minimum width is {MIN_WIDTH}")
        for cfg, mod in zip(self.configs, self.mods):
            k = cfg.kind
            if k == "conv2d" or k == "linear":
                x = mod(x)
            elif k == "maxpool2d":
                x = F.maxpool2d(x, cfg.kernel, cfg.stride)
            elif k == "relu":
                x = relu(x)
            elif k == "mean_vertical":
                x = F.mean_vertical(x)
            elif k == "bilstm":
                x = mod(x, lengths)
            elif k == "softmax" and not skip_softmax:
                x = softmax(x, axis=-1)
        return x, lengths

    def __call__(self, x: Tensor, widths, skip_softmax: bool = False):
        return self.forward(x, widths, skip_softmax)

    def run(self, images: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Inference on a list of line images; returns one ``(T_i, K)`` array per line."""
        with no_grad():
            x, widths = prepare_batch(images)
            out, lengths = self.forward(x, widths)
        return [out.data[i, : lengths[i]] for i in range(len(images))]

    def meta(self) -> dict:
        return {"kind": self.kind}

    def checkpoint(self, optimizer: AdamState | None = None, extra: dict | None = None) -> nn.Checkpoint:
        meta = self.meta()
        if extra:
            meta.update(extra)
        return nn.Checkpoint(params={k: v.copy() for k, v in self.state_dict().items()}, optimizer=optimizer, meta=meta)


class OcrModel(SequenceNet):
    """CTC line recognizer; outputs raw per-step logits over blank + charset."""

    kind = "ocr"

    def __init__(self, charset: Charset, seed: int = 0, dtype=np.float32):
        self.charset = charset
        super().__init__(ocr_configs(charset.num_classes), seed=seed, dtype=dtype)

    def meta(self) -> dict:
        return {"kind": self.kind, "charset": self.charset.to_string()}

    @property
    def rnn(self) -> BiLSTM:
        return next(m for m in self.mods if isinstance(m, BiLSTM))

    def probabilities(self, images: Sequence[np.ndarray]) -> list[np.ndarray]:
        out = []
        for logits in self.run(images):
            z = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(z)
            out.append(e / e.sum(axis=-1, keepdims=True))
        return out


def ocr_forward(model: OcrModel, image: np.ndarray) -> np.ndarray:
    """``(T, C)`` logits for one ``(32, W)`` line image, ``T = (W - 2) // 4``."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != INPUT_HEIGHT:
        raise ValueError(f"expected a ({INPUT_HEIGHT}, W) image, got shape {image.shape}")
    return model.run([image])[0]


class CocrClassifier(SequenceNet):
    """Per-step font-group distribution, aligned with the recognizer's output steps."""

    kind = "cocr_classifier"

    def __init__(self, groups: Sequence[FontGroup], seed: int = 0, dtype=np.float32):
        self.groups = tuple(FontGroup.parse(g) for g in groups)
        super().__init__(classifier_configs(len(self.groups)), seed=seed, dtype=dtype)

    def meta(self) -> dict:
        return {"kind": self.kind, "groups": [g.label for g in self.groups]}

    @property
    def rnn(self) -> BiLSTM:
        return next(m for m in self.mods if isinstance(m, BiLSTM))

    def scores(self, images: Sequence[np.ndarray]) -> list[np.ndarray]:
        return self.run(images)


def column_index(width: int, steps: int) -> np.ndarray:
    """Nearest step for every pixel column (upsampling map)."""
    x = np.arange(width)
    return np.minimum(((2 * x + 1) * steps) // (2 * width), steps - 1)


def step_index(steps: int, width: int) -> np.ndarray:
    """Nearest pixel column for every output step (label downscaling map)."""
    t = np.arange(steps)
    return np.minimum(((2 * t + 1) * width) // (2 * steps), width - 1)


def downscale_labels(labels: np.ndarray, steps: int) -> np.ndarray:
    """Per-step targets from per-column labels, by nearest index, never interpolated."""
    labels = np.asarray(labels)
    return labels[step_index(steps, len(labels))]


class ColumnClassifier(CocrClassifier):
    """Classifier whose step scores are upsampled back to one vector per pixel column."""

    kind = "column_classifier"

    def forward_columns(self, x: Tensor, widths, skip_softmax: bool = False) -> tuple[Tensor, np.ndarray]:
        """``(N, Wmax, G)`` column scores; columns beyond an item's width repeat its last step."""
        steps, lengths = self.forward(x, widths, skip_softmax)
        wmax = int(np.max(widths))
        idx = np.zeros((len(widths), wmax), dtype=np.int64)
        for i, (w, t) in enumerate(zip(widths, lengths)):
            idx[i, :w] = column_index(int(w), int(t))
            idx[i, w:] = t - 1
        rows = np.arange(len(widths))[:, None]
        return getitem(steps, (rows, idx)), np.asarray(widths)

    def classify_columns(self, images: Sequence[np.ndarray]) -> list[np.ndarray]:
        """One ``(W_i, G)`` array of per-column distributions per line."""
        with no_grad():
            x, widths = prepare_batch(images)
            cols, _ = self.forward_columns(x, widths)
        return [cols.data[i, : widths[i]] for i in range(len(images))]


class CocrSystem(Module):
    """Jointly trained combination: one recognizer branch per group plus the classifier."""

    kind = "cocr_system"

    def __init__(self, branches: dict[FontGroup, OcrModel], classifier: CocrClassifier):
        super().__init__()
        if tuple(branches) != classifier.groups:
            raise ValueError("branch order must match the classifier's group order")
        self.branches = dict(branches)
        self.classifier = classifier
        for g, m in self.branches.items():
            self.add_module(f"branch_{g.name}", m)
        self.add_module("classifier", classifier)

    @property
    def groups(self) -> tuple[FontGroup, ...]:
        return self.classifier.groups

    @property
    def charset(self) -> Charset:
        return next(iter(self.branches.values())).charset

    def meta(self) -> dict:
        return {"kind": self.kind, "groups": [g.label for g in self.groups], "charset": self.charset.to_string()}

    def checkpoint(self, optimizer: AdamState | None = None, extra: dict | None = None) -> nn.Checkpoint:
        meta = self.meta()
        if extra:
            meta.update(extra)
        return nn.Checkpoint(params={k: v.copy() for k, v in self.state_dict().items()}, optimizer=optimizer, meta=meta)


# -- checkpoints --------------------------------------------------------------


def model_from_checkpoint(ckpt: nn.Checkpoint):
    """Rebuild the network described by ``ckpt.meta`` and load its parameters."""
    kind = ckpt.meta.get("kind")
    if kind == "ocr":
        model = OcrModel(Charset(ckpt.meta["charset"]))
    elif kind in ("cocr_classifier", "column_classifier"):
        cls = CocrClassifier if kind == "cocr_classifier" else ColumnClassifier
        model = cls([FontGroup.parse(g) for g in ckpt.meta["groups"]])
    elif kind == "cocr_system":
        groups = [FontGroup.parse(g) for g in ckpt.meta["groups"]]
        charset = Charset(ckpt.meta["charset"])
        model = CocrSystem({g: OcrModel(charset) for g in groups}, CocrClassifier(groups))
    else:
        raise nn.CheckpointError(f"unknown model kind {kind!r}")
    model.load_state_dict(ckpt.params)
    return model


def load_model(path):
    return model_from_checkpoint(nn.load_checkpoint(path))


def init_finetune(baseline_ckpt) -> tuple[OcrModel, AdamState]:
    """Recognizer and optimizer state restored from a baseline checkpoint (path or object)."""
    ckpt = baseline_ckpt if isinstance(baseline_ckpt, nn.Checkpoint) else nn.load_checkpoint(baseline_ckpt)
    if ckpt.optimizer is None:
        raise nn.CheckpointError("checkpoint has no optimizer state; fine-tuning needs the baseline's Adam moments")
    model = model_from_checkpoint(ckpt)
    if not isinstance(model, OcrModel):
        raise nn.CheckpointError(f"expected a recognizer checkpoint, got {ckpt.meta.get('kind')!r}")
    st = ckpt.optimizer
    state = AdamState(
        lr=st.lr,
        beta1=st.beta1,
        beta2=st.beta2,
        eps=st.eps,
        step=st.step,
        m={k: v.copy() for k, v in st.m.items()},
        v={k: v.copy() for k, v in st.v.items()},
    )
    return model, state


# -- registry -----------------------------------------------------------------

CLASSIFIER = "classifier"
COLUMN_CLASSIFIER = "column_classifier"
COCR = "cocr"
BASELINE = "baseline"
GOTHIC_ROLE = "gothic"
ROMAN_ROLE = "roman"


class RegistryError(KeyError):
    """A model role is missing from the registry or its file does not exist."""


def font_role(group: FontGroup) -> str:
    return f"font:{FontGroup.parse(group).label}"


class ModelRegistry:
    """Model roles mapped to checkpoint files, read from and written to an INI manifest::

        [models]
        baseline = baseline.ckpt
        font:Antiqua = antiqua.ckpt
        classifier = cocr_classifier.ckpt

    Relative paths resolve against the manifest's directory.
    """

    def __init__(self, paths: dict[str, Path] | None = None):
        self.paths: dict[str, Path] = {k: Path(v) for k, v in (paths or {}).items()}
        self._cache: dict[str, object] = {}

    @staticmethod
    def _parser() -> configparser.ConfigParser:
        cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
        cp.optionxform = str
        return cp

    @classmethod
    def load(cls, manifest) -> "ModelRegistry":
        manifest = Path(manifest)
        if not manifest.exists():
            raise FileNotFoundError(f"registry manifest not found: {manifest}")
        cp = cls._parser()
        cp.read(manifest, encoding="utf-8")
        if "models" not in cp:
            raise ValueError(f"{manifest}: missing [models] section")
        paths = {}
        for role, p in cp["models"].items():
            path = Path(p)
            paths[role] = path if path.is_absolute() else manifest.parent / path
        return cls(paths)

    def save(self, manifest) -> Path:
        manifest = Path(manifest)
        cp = self._parser()
        cp["models"] = {}
        for role in sorted(self.paths):
            p = self.paths[role]
            try:
                p = p.resolve().relative_to(manifest.parent.resolve())
            except ValueError:
                pass
            cp["models"][role] = str(p)
        manifest.parent.mkdir(parents=True, exist_ok=True)
        with open(manifest, "w", encoding="utf-8") as fh:
            cp.write(fh)
        return manifest

    def set(self, role: str, path) -> None:
        self.paths[role] = Path(path)
        self._cache.pop(role, None)

    def __contains__(self, role: str) -> bool:
        return role in self.paths

    def missing(self, roles: Iterable[str]) -> list[str]:
        return [r for r in roles if r not in self.paths or not self.paths[r].exists()]

    def get(self, role: str):
        if role not in self.paths:
            raise RegistryError(f"registry has no model for role {role!r}")
        if not self.paths[role].exists():
            raise RegistryError(f"checkpoint for role {role!r} not found: {self.paths[role]}")
        if role not in self._cache:
            self._cache[role] = load_model(self.paths[role])
        return self._cache[role]

    def font_model(self, group: FontGroup) -> OcrModel:
        return self.get(font_role(group))

    def font_models(self, groups: Iterable[FontGroup]) -> dict[FontGroup, OcrModel]:
        return {g: self.font_model(g) for g in groups}
