"""Parameterised layers and the config records that describe them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, relu, softmax

LAYER_KINDS = ("conv2d", "maxpool2d", "linear", "bilstm", "mean_vertical", "relu", "softmax")


@dataclass(frozen=True)
class LayerConfig:
    """One row of a network table.

    ``kernel``, ``stride`` and ``padding`` are (height, width) pairs.
    ``in_size``/``out_size`` are channels for convolutions, features for
    linear and recurrent layers (``out_size`` is the hidden size per
    direction for ``bilstm``).
    """

    kind: str
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    in_size: int = 1
    out_size: int = 1
    num_layers: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError("kernel and stride must be >= 1")
        if min(self.padding) < 0:
            raise ValueError("padding must be >= 0")
        if self.in_size < 1 or self.out_size < 1 or self.num_layers < 1:
            raise ValueError("channel, feature and layer counts must be positive")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        if self.kind == "conv2d":
            return (
                F.conv_output_size(h, self.kernel[0], self.stride[0], self.padding[0]),
                F.conv_output_size(w, self.kernel[1], self.stride[1], self.padding[1]),
            )
        if self.kind == "maxpool2d":
            return ((h - self.kernel[0]) // self.stride[0] + 1, (w - self.kernel[1]) // self.stride[1] + 1)
        if self.kind == "mean_vertical":
            return (1, w)
        return (h, w)


class Module:
    """Container of named parameters and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        own = dict(self.named_parameters())
        missing = [k for k in own if prefix + k not in state]
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {missing}")
        for name, p in own.items():
            value = state[prefix + name]
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = np.array(value, dtype=p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cfg: LayerConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        kh, kw = cfg.kernel
        bound = 1.0 / np.sqrt(cfg.in_size * kh * kw)
        self.weight = self.add_param("weight", _uniform(rng, bound, (cfg.out_size, cfg.in_size, kh, kw), dtype))
        self.bias = self.add_param("bias", _uniform(rng, bound, (cfg.out_size,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.cfg.stride, self.cfg.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = self.add_param("weight", _uniform(rng, bound, (out_features, in_features), dtype))
        self.bias = self.add_param("bias", _uniform(rng, bound, (out_features,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LSTMDirection(Module):
    def __init__(self, in_features: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = self.add_param("w_ih", _uniform(rng, bound, (4 * hidden, in_features), dtype))
        self.w_hh = self.add_param("w_hh", _uniform(rng, bound, (4 * hidden, hidden), dtype))
        b = _uniform(rng, bound, (4 * hidden,), dtype)
        b[hidden : 2 * hidden] = 1.0  # forget gate
        self.bias = self.add_param("bias", b)

    def params(self):
        return (self.w_ih, self.w_hh, self.bias)


class BiLSTM(Module):
    """Stack of bidirectional LSTM layers; output width is ``2 * hidden``."""

    def __init__(self, in_features: int, hidden: int, num_layers: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.hidden = hidden
        self.num_layers = num_layers
        self.layers = []
        size = in_features
        for k in range(num_layers):
            fwd = self.add_module(f"l{k}_fwd", LSTMDirection(size, hidden, rng, dtype))
            bwd = self.add_module(f"l{k}_bwd", LSTMDirection(size, hidden, rng, dtype))
            self.layers.append((fwd, bwd))
            size = 2 * hidden

    def __call__(self, x: Tensor, lengths=None) -> Tensor:
        for fwd, bwd in self.layers:
            x = F.bilstm(x, fwd.params(), bwd.params(), lengths)
        return x


def apply_activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "softmax":
        return softmax(x, axis=-1)
    raise ValueError(kind)
