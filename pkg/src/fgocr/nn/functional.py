"""Layer-level differentiable ops: convolution, pooling, linear, LSTM.

Images are laid out channels-last, ``(N, H, W, C)``; sequences are
``(N, T, F)``.  Weights follow the usual ``(out, in, kh, kw)`` convention.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_node


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _columns(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    # All patches as one (N*OH*OW, kh*kw*C) matrix, ordered (kh, kw, C).
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, : sh * (oh - 1) + 1 : sh, : sw * (ow - 1) + 1 : sw]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * xp.shape[-1])


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: input of shape ``(N, H, W, C)``.
        weight: kernel of shape ``(O, C, kh, kw)``.
        bias: ``(O,)`` or None.
        stride: ``(sh, sw)`` or int.
        padding: ``(ph, pw)`` or int, zeros on both sides.

    Returns:
        Tensor of shape ``(N, OH, OW, O)`` with
        ``OH = (H + 2 ph - kh) // sh + 1`` (same for the width).
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and OCHW weights, got {x.shape} and {weight.shape}")
    n, h, w, c = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"input has {c} channels but the kernel expects {ci}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError(f"padded input {(h + 2 * ph, w + 2 * pw)} smaller than kernel {(kh, kw)}")
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    wmat = weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o)
    cols = _columns(xp, kh, kw, sh, sw, oh, ow)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, o)

    def backward(g):
        g2 = g.reshape(-1, o)
        dweight = (cols.T @ g2).reshape(kh, kw, c, o).transpose(3, 2, 0, 1) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            # Scatter the patch gradients back channels-first; contiguous rows make the adds cheap.
            dcols = (wmat @ g2.T).reshape(kh, kw, c, n, oh, ow)
            dxp = np.zeros((c,) + xp.shape[:3], dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw] += dcols[i, j]
            dx = np.ascontiguousarray(dxp[:, :, ph : ph + h, pw : pw + w].transpose(1, 2, 3, 0))
        dbias = g2.sum(axis=0) if bias is not None else None
        return dx, dweight, dbias

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def maxpool2d(x: Tensor, kernel, stride=None) -> Tensor:
    """Max pooling without padding; ties route the gradient to the first maximum."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    n, h, w, c = x.shape
    if h < kh or w < kw:
        raise ShapeError(f"pooling kernel {(kh, kw)} larger than input {(h, w)}")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1

    def window(a, i, j):
        return a[:, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw, :]

    best = window(x.data, 0, 0).copy()
    arg = np.zeros(best.shape, dtype=np.int16)
    for k in range(1, kh * kw):
        i, j = divmod(k, kw)
        cand = window(x.data, i, j)
        better = cand > best
        best = np.where(better, cand, best)
        arg[better] = k

    def backward(g):
        dx = np.zeros_like(x.data)
        for k in range(kh * kw):
            i, j = divmod(k, kw)
            window(dx, i, j)[...] += np.where(arg == k, g, 0)
        return (dx,)

    return make_node(best, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is ``(out, in)``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear layer expects {weight.shape[1]} features, got {x.shape[-1]}")
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data.T
    if bias is not None:
        out += bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[0],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        dx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        dw = g2.T @ flat if weight.requires_grad else None
        db = g2.sum(axis=0) if bias is not None else None
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def mean_vertical(x: Tensor) -> Tensor:
    """Average an ``(N, H, W, C)`` map over its height, giving ``(N, W, C)``."""
    h = x.shape[1]
    return make_node(
        x.data.mean(axis=1),
        (x,),
        lambda g: (np.broadcast_to(g[:, None] / h, x.shape).astype(x.dtype),),
    )


def reverse_padded(x: Tensor, lengths) -> Tensor:
    """Reverse each sequence of ``(N, T, F)`` within its own length.

    Positions at or beyond a sequence's length stay in place, so the
    permutation is its own inverse.
    """
    n, t = x.shape[:2]
    lengths = np.asarray(lengths, dtype=np.int64)
    steps = np.arange(t)[None, :]
    idx = np.where(steps < lengths[:, None], lengths[:, None] - 1 - steps, steps)
    rows = np.arange(n)[:, None]
    return make_node(x.data[rows, idx], (x,), lambda g: (g[rows, idx],))


def _lstm_stack(xs: np.ndarray, w_ih: np.ndarray, w_hh: np.ndarray, bias: np.ndarray):
    """Run ``D`` independent LSTMs side by side; ``xs`` is ``(D, N, T, F)``.

    Returns the forward caches needed by :func:`_lstm_stack_backward`.
    """
    d, n, t, f = xs.shape
    hid = w_hh.shape[2]
    dtype = xs.dtype
    xg = np.matmul(xs.reshape(d, n * t, f), w_ih.transpose(0, 2, 1)).reshape(d, n, t, 4 * hid)
    xg += bias[:, None, None, :]
    whh_t = w_hh.transpose(0, 2, 1)
    acts = np.empty((t, d, n, 4 * hid), dtype=dtype)
    cells = np.empty((t, d, n, hid), dtype=dtype)
    tcells = np.empty((t, d, n, hid), dtype=dtype)
    hs = np.empty((t, d, n, hid), dtype=dtype)
    h = np.zeros((d, n, hid), dtype=dtype)
    c = np.zeros((d, n, hid), dtype=dtype)
    for step in range(t):
        z = xg[:, :, step] + np.matmul(h, whh_t)
        a = acts[step]
        # sigmoid(z) = (1 + tanh(z / 2)) / 2; far cheaper than scipy's expit here
        np.multiply(z, 0.5, out=a)
        np.tanh(a, out=a)
        a *= 0.5
        a += 0.5
        np.tanh(z[..., 2 * hid : 3 * hid], out=a[..., 2 * hid : 3 * hid])
        c = a[..., hid : 2 * hid] * c + a[..., :hid] * a[..., 2 * hid : 3 * hid]
        cells[step] = c
        tc = np.tanh(c, out=tcells[step])
        h = np.multiply(a[..., 3 * hid :], tc, out=hs[step])
    return acts, cells, tcells, hs


def _lstm_stack_backward(gy, xs, w_ih, w_hh, caches, need_dx: bool):
    acts, cells, tcells, hs = caches
    t, d, n, hid = hs.shape
    f = xs.shape[-1]
    dz = np.empty_like(acts)
    dh_next = np.zeros((d, n, hid), dtype=gy.dtype)
    dc_next = np.zeros((d, n, hid), dtype=gy.dtype)
    for step in range(t - 1, -1, -1):
        a = acts[step]
        ig, fg, gg, og = a[..., :hid], a[..., hid : 2 * hid], a[..., 2 * hid : 3 * hid], a[..., 3 * hid :]
        tc = tcells[step]
        dh = gy[step] + dh_next
        dc = dh * og * (1 - tc * tc) + dc_next
        g = dz[step]
        g[..., :hid] = dc * gg * ig * (1 - ig)
        g[..., hid : 2 * hid] = dc * cells[step - 1] * fg * (1 - fg) if step > 0 else 0.0
        g[..., 2 * hid : 3 * hid] = dc * ig * (1 - gg * gg)
        g[..., 3 * hid :] = dh * tc * og * (1 - og)
        dc_next = dc * fg
        dh_next = np.matmul(g, w_hh)
    dzd = dz.transpose(1, 2, 0, 3).reshape(d, n * t, 4 * hid)
    dx = np.matmul(dzd, w_ih).reshape(d, n, t, f) if need_dx else None
    dw_ih = np.matmul(dzd.transpose(0, 2, 1), xs.reshape(d, n * t, f))
    if t > 1:
        dprev = dz[1:].transpose(1, 0, 2, 3).reshape(d, -1, 4 * hid)
        hprev = hs[:-1].transpose(1, 0, 2, 3).reshape(d, -1, hid)
        dw_hh = np.matmul(dprev.transpose(0, 2, 1), hprev)
    else:
        dw_hh = np.zeros_like(w_hh)
    db = dz.sum(axis=(0, 2))
    return dx, dw_ih, dw_hh, db


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """Unidirectional LSTM over ``(N, T, F)`` starting from zero state.

    Gate order in the stacked weights is input, forget, cell, output::

        i, f, o = sigmoid(.)   g = tanh(.)
        c_t = f * c_{t-1} + i * g
        h_t = o * tanh(c_t)

    Returns the hidden states ``(N, T, H)``.
    """
    n, t, f = x.shape
    hid = w_hh.shape[1]
    if w_ih.shape != (4 * hid, f):
        raise ShapeError(f"w_ih must be {(4 * hid, f)}, got {w_ih.shape}")
    xs = x.data[None]
    caches = _lstm_stack(xs, w_ih.data[None], w_hh.data[None], bias.data[None])
    hs = caches[3]

    def backward(gy):
        dx, dw_ih, dw_hh, db = _lstm_stack_backward(
            gy.transpose(1, 0, 2)[:, None], xs, w_ih.data[None], w_hh.data[None], caches, x.requires_grad
        )
        return (dx[0] if dx is not None else None), dw_ih[0], dw_hh[0], db[0]

    return make_node(np.ascontiguousarray(hs[:, 0].transpose(1, 0, 2)), (x, w_ih, w_hh, bias), backward)


def _reverse_index(n: int, t: int, lengths) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.asarray(lengths, dtype=np.int64)
    steps = np.arange(t)[None, :]
    return np.arange(n)[:, None], np.where(steps < lengths[:, None], lengths[:, None] - 1 - steps, steps)


def bilstm(x: Tensor, forward_params, backward_params, lengths=None) -> Tensor:
    """One bidirectional layer: forward and reversed passes concatenated per step.

    Both directions advance in the same loop so each step costs one batched
    matmul instead of two.
    """
    n, t, f = x.shape
    hid = forward_params[1].shape[1]
    for w_ih, w_hh, b in (forward_params, backward_params):
        if w_ih.shape != (4 * hid, f) or w_hh.shape != (4 * hid, hid):
            raise ShapeError(f"LSTM weights do not match input width {f} and hidden size {hid}")
    if lengths is None:
        lengths = np.full(n, t)
    rows, idx = _reverse_index(n, t, lengths)
    xs = np.stack([x.data, x.data[rows, idx]])
    w_ih = np.stack([forward_params[0].data, backward_params[0].data])
    w_hh = np.stack([forward_params[1].data, backward_params[1].data])
    bias = np.stack([forward_params[2].data, backward_params[2].data])
    caches = _lstm_stack(xs, w_ih, w_hh, bias)
    hs = caches[3]
    out = np.concatenate([hs[:, 0].transpose(1, 0, 2), hs[:, 1].transpose(1, 0, 2)[rows, idx]], axis=-1)

    def backward(gy):
        g = np.empty((t, 2, n, hid), dtype=gy.dtype)
        g[:, 0] = gy[..., :hid].transpose(1, 0, 2)
        g[:, 1] = gy[..., hid:][rows, idx].transpose(1, 0, 2)
        dxs, dw_ih, dw_hh, db = _lstm_stack_backward(g, xs, w_ih, w_hh, caches, x.requires_grad)
        dx = None
        if dxs is not None:
            dx = dxs[0] + dxs[1][rows, idx]
        return (dx, dw_ih[0], dw_hh[0], db[0], dw_ih[1], dw_hh[1], db[1])

    return make_node(out, (x, *forward_params, *backward_params), backward)
