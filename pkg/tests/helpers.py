"""Shared test utilities: finite differences and tiny datasets."""

from __future__ import annotations

import numpy as np

from fgocr.nn.tensor import Tensor


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, tensors: list[Tensor], rng: np.random.Generator, entries: int = 12, eps: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences.

    ``fn()`` must rebuild the graph from ``tensors`` and return an output
    tensor; the scalar objective is ``sum(out * R)`` for a fixed random R.
    Only ``entries`` randomly chosen coordinates per tensor are perturbed.
    """
    out = fn()
    r = rng.standard_normal(out.shape)
    for t in tensors:
        t.grad = None
    (out * Tensor(r)).sum().backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        num = np.empty(len(picks))
        for j, p in enumerate(picks):
            old = flat[p]
            flat[p] = old + eps
            up = float(np.sum(fn().data * r))
            flat[p] = old - eps
            down = float(np.sum(fn().data * r))
            flat[p] = old
            num[j] = (up - down) / (2 * eps)
        worst = max(worst, rel_error(num, ga.reshape(-1)[picks]))
    return worst


def check_directional(fn, tensors: list[Tensor], rng: np.random.Generator, eps: float = 1e-6, tries: int = 5) -> float:
    """Worst relative error of each tensor's directional derivative along a random direction.

    Projecting onto a dense direction keeps the signal well above rounding
    noise even when individual gradient entries are tiny.  A direction whose
    central differences at ``eps`` and ``eps / 4`` disagree straddles a ReLU
    or pooling kink, where finite differences are meaningless; such
    directions are redrawn (up to ``tries`` times).
    """
    out = fn()
    r = rng.standard_normal(out.shape)
    for t in tensors:
        t.grad = None
    (out * Tensor(r)).sum().backward()

    def central(t, base, v, h):
        t.data[...] = base + h * v
        up = float(np.sum(fn().data * r))
        t.data[...] = base - h * v
        down = float(np.sum(fn().data * r))
        t.data[...] = base
        return (up - down) / (2 * h)

    worst = 0.0
    for t in tensors:
        base = t.data.copy()
        for _ in range(tries):
            v = rng.standard_normal(t.data.shape)
            analytic = float(np.sum(t.grad * v))
            num, fine = central(t, base, v, eps), central(t, base, v, eps / 4)
            scale = max(abs(num), abs(analytic), 1e-12)
            if abs(num - fine) / scale < 1e-5:
                break
        worst = max(worst, abs(num - analytic) / scale)
    return worst
