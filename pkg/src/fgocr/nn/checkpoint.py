"""Versioned binary checkpoint container.

Layout::

    b"FGOCRCKP" | u32 version | u64 header length | JSON header | payload

The header lists every array (name, shape, byte offset) plus free-form
metadata and the scalar part of the optimizer state.  The payload holds the
arrays as little-endian float32, in header order.  Writing the same content
twice yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"FGOCRCKP"
VERSION = 1
_M_PREFIX = "__adam_m__/"
_V_PREFIX = "__adam_v__/"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = [(k, ckpt.params[k]) for k in sorted(ckpt.params)]
    opt = None
    if ckpt.optimizer is not None:
        st = ckpt.optimizer
        opt = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "step": st.step}
        arrays += [(_M_PREFIX + k, st.m[k]) for k in sorted(st.m)]
        arrays += [(_V_PREFIX + k, st.v[k]) for k in sorted(st.v)]
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"tensors": entries, "optimizer": opt, "meta": ckpt.meta},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    base = start + hlen
    params: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for e in header["tensors"]:
        lo = base + e["offset"]
        arr = np.frombuffer(blob[lo : lo + e["nbytes"]], dtype="<f4").astype(np.float32).reshape(e["shape"])
        name = e["name"]
        if name.startswith(_M_PREFIX):
            m[name[len(_M_PREFIX) :]] = arr
        elif name.startswith(_V_PREFIX):
            v[name[len(_V_PREFIX) :]] = arr
        else:
            params[name] = arr
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"], m=m, v=v)
    return Checkpoint(params=params, optimizer=opt, meta=header["meta"])


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
