"""Connectionist temporal classification: loss, greedy decoding, oracle.

Class 0 is the blank.  Score arrays are ``(T, C)`` per line or
``(N, T, C)`` per batch.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn.tensor import Tensor, make_node

BLANK = 0
_NEG_INF = -np.inf


class CTCError(ValueError):
    """Raised when no alignment between the input and the label exists."""


def min_input_length(label: Sequence[int]) -> int:
    """Shortest input that can emit ``label``: one step per symbol plus a blank between repeats."""
    label = list(label)
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ctc_forward_backward(log_probs: np.ndarray, labels: Sequence[Sequence[int]], lengths=None):
    """Negative log-likelihood and its gradient w.r.t. the log-probabilities.

    Args:
        log_probs: ``(N, T, C)`` per-step log-probabilities (rows already
            normalised).  Computation is carried out in float64.
        labels: one label sequence per batch item (no blanks).
        lengths: valid number of time steps per item; defaults to ``T``.

    Returns:
        ``(nll, grad)`` with ``nll`` of shape ``(N,)`` and ``grad`` shaped like
        ``log_probs``; steps beyond an item's length receive zero gradient.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    n, t_max, c = lp.shape
    lengths = np.full(n, t_max, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    labels = [list(map(int, lab)) for lab in labels]
    for b, lab in enumerate(labels):
        if any(k == BLANK or k < 0 or k >= c for k in lab):
            raise ValueError(f"label {b} contains the blank or an out-of-range class")
        need = min_input_length(lab)
        if lengths[b] < 1 or lengths[b] > t_max or need > lengths[b]:
            raise CTCError(f"item {b}: label needs at least {need} steps, input has {lengths[b]}")

    label_lens = np.array([len(lab) for lab in labels], dtype=np.int64)
    s_len = 2 * label_lens + 1
    s_max = int(s_len.max())
    ext = np.full((n, s_max), BLANK, dtype=np.int64)
    for b, lab in enumerate(labels):
        ext[b, 1 : 2 * len(lab) + 1 : 2] = lab
    valid = np.arange(s_max)[None, :] < s_len[:, None]
    skip = np.zeros((n, s_max), dtype=bool)
    if s_max > 2:
        skip[:, 2:] = (ext[:, 2:] != BLANK) & (ext[:, 2:] != ext[:, :-2])

    emit = np.take_along_axis(lp, np.broadcast_to(ext[:, None, :], (n, t_max, s_max)), axis=2)
    emit = np.where(valid[:, None, :], emit, _NEG_INF)
    rows = np.arange(n)

    alpha = np.full((n, t_max, s_max), _NEG_INF)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if s_max > 1:
        alpha[:, 0, 1] = emit[:, 0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, t_max):
            prev = alpha[:, t - 1]
            a = prev.copy()
            a[:, 1:] = np.logaddexp(a[:, 1:], prev[:, :-1])
            if s_max > 2:
                a[:, 2:] = np.logaddexp(a[:, 2:], np.where(skip[:, 2:], prev[:, :-2], _NEG_INF))
            alpha[:, t] = a + emit[:, t]

        last = alpha[rows, lengths - 1]
        end1 = last[rows, s_len - 1]
        end2 = np.where(s_len > 1, last[rows, np.maximum(s_len - 2, 0)], _NEG_INF)
        loglik = np.logaddexp(end1, end2)

        # beta excludes the emission at its own step.
        beta = np.full((n, t_max, s_max), _NEG_INF)
        for t in range(t_max - 1, -1, -1):
            cur = np.full((n, s_max), _NEG_INF)
            rec = t < lengths - 1
            if rec.any():
                nb = beta[:, t + 1] + emit[:, t + 1]
                r = nb.copy()
                r[:, :-1] = np.logaddexp(r[:, :-1], nb[:, 1:])
                if s_max > 2:
                    r[:, :-2] = np.logaddexp(r[:, :-2], np.where(skip[:, 2:], nb[:, 2:], _NEG_INF))
                cur[rec] = r[rec]
            init = np.nonzero(t == lengths - 1)[0]
            cur[init, s_len[init] - 1] = 0.0
            has2 = init[s_len[init] > 1]
            cur[has2, s_len[has2] - 2] = 0.0
            beta[:, t] = cur

        occ = np.exp(alpha + beta - loglik[:, None, None])
    onehot = np.zeros((n, s_max, c))
    onehot[rows[:, None], np.arange(s_max)[None, :], ext] = 1.0
    onehot *= valid[:, :, None]
    grad = -np.matmul(occ, onehot)
    return -loglik, grad


def ctc_loss(logits: np.ndarray, label: Sequence[int], probabilities: bool = False):
    """Loss ``-log P(label | scores)`` for one ``(T, C)`` sequence and its exact gradient.

    With ``probabilities=True`` the rows are taken as already-normalised
    distributions and the gradient is w.r.t. those log-probabilities;
    otherwise rows are raw logits and the gradient is w.r.t. the logits.
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("expected a (T, C) array with C >= 2")
    if probabilities:
        with np.errstate(divide="ignore"):
            nll, g = ctc_forward_backward(np.log(x)[None], [label])
        return float(nll[0]), g[0]
    lp = _log_softmax(x)
    nll, g = ctc_forward_backward(lp[None], [label])
    g = g[0]
    grad_logits = g - np.exp(lp) * g.sum(axis=-1, keepdims=True)
    return float(nll[0]), grad_logits


def ctc_loss_tensor(log_probs: Tensor, labels, lengths=None) -> Tensor:
    """Mean CTC loss over a batch of ``(N, T, C)`` log-probabilities, as a graph node."""
    nll, grad = ctc_forward_backward(log_probs.data, labels, lengths)
    n = log_probs.shape[0]
    grad = (grad / n).astype(log_probs.dtype)
    out = np.asarray(nll.mean(), dtype=log_probs.dtype)
    return make_node(out, (log_probs,), lambda g: (grad * g,))


def greedy_path(scores: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(scores), axis=-1)


def collapse(path: Sequence[int]) -> list[int]:
    """Merge runs of equal symbols, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out


def greedy_decode(scores: np.ndarray, length: int | None = None) -> list[int]:
    """Best-path decoding: argmax per step (ties to the lowest class), collapse, drop blanks."""
    scores = np.asarray(scores)
    if length is not None:
        scores = scores[:length]
    return collapse(greedy_path(scores))


def brute_force_likelihood(scores: np.ndarray, label: Sequence[int], probabilities: bool = False) -> float:
    """Sum of path probabilities over every path collapsing to ``label``.

    Exhaustive over all ``C**T`` paths, so only tiny inputs are accepted.
    """
    x = np.asarray(scores, dtype=np.float64)
    t, c = x.shape
    if t > 10 or c > 5:
        raise ValueError(f"brute force limited to T <= 10 and C <= 5, got T={t}, C={c}")
    probs = x if probabilities else np.exp(_log_softmax(x))
    label = list(label)
    idx = np.arange(c**t)
    paths = (idx[:, None] // (c ** np.arange(t - 1, -1, -1))[None, :]) % c
    p = np.prod(probs[np.arange(t)[None, :], paths], axis=1)
    keep = paths != BLANK
    keep[:, 1:] &= paths[:, 1:] != paths[:, :-1]
    counts = keep.sum(axis=1)
    sel = counts == len(label)
    if not sel.any():
        return 0.0
    if len(label) == 0:
        return float(p[sel].sum())
    kept = paths[sel][keep[sel]].reshape(-1, len(label))
    match = np.all(kept == np.asarray(label)[None, :], axis=1)
    return float(p[sel][match].sum())
