"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def check(self, params: dict[str, np.ndarray]) -> None:
        if self.step < 0:
            raise ValueError("step counter must be non-negative")
        for name, p in params.items():
            for moments in (self.m, self.v):
                if name in moments and moments[name].shape != p.shape:
                    raise ValueError(f"moment shape mismatch for {name}")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamState) -> None:
    """Apply one Adam update to ``params`` in place and advance ``state``.

    Parameters without a gradient are treated as having a zero gradient so
    that their moments decay consistently.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if g is None:
            m *= b1
            v *= b2
        else:
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
        mhat = m / p.dtype.type(corr1)
        vhat = v / p.dtype.type(corr2)
        p -= p.dtype.type(state.lr) * mhat / (np.sqrt(vhat) + p.dtype.type(state.eps))


class Adam:
    """Stateful wrapper binding :func:`adam_step` to a model's named parameters."""

    def __init__(self, named_params, lr: float = 1e-3, state: AdamState | None = None):
        self.params: dict[str, Tensor] = dict(named_params)
        self.state = state if state is not None else AdamState(lr=lr)
        self.state.check({k: t.data for k, t in self.params.items()})

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def step(self) -> None:
        adam_step(
            {k: t.data for k, t in self.params.items()},
            {k: t.grad for k, t in self.params.items()},
            self.state,
        )

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
