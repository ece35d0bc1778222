"""Bit-exact named-tensor checkpoints.

Layout: magic ``MDN1``, then per tensor (sorted by name): u32 name
length, UTF-8 name, u8 dtype code (0 = float32, 1 = float64, 2 = uint8),
u8 rank, rank u64 dims, raw little-endian row-major data. The config
snapshot and step counter ride along as a reserved ``__meta__`` uint8
tensor holding JSON. Writes go through a temp file + rename so a crash
never leaves a torn checkpoint.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MAGIC = b"MDN1"
META_NAME = "__meta__"

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict | None = None
    step: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: str, tensors: dict[str, np.ndarray],
                    config: dict | None = None, step: int = 0,
                    extra: dict | None = None):
    meta = json.dumps({"step": step, "config": config, "extra": extra or {}},
                      sort_keys=True).encode("utf-8")
    records = dict(tensors)
    if META_NAME in records:
        raise DataError(f"tensor name {META_NAME!r} is reserved")
    records[META_NAME] = np.frombuffer(meta, dtype=np.uint8)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(records):
            arr = np.ascontiguousarray(records[name])
            key = (arr.dtype.kind, arr.dtype.itemsize)
            if key not in _KIND_TO_CODE:
                raise DataError(f"{name}: unsupported dtype {arr.dtype}")
            code = _KIND_TO_CODE[key]
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint")
    off = 4
    tensors: dict[str, np.ndarray] = {}
    while off < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        if code not in _CODE_TO_DTYPE:
            raise DataError(f"{path}: unknown dtype code {code} for {name!r}")
        dims = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        dtype = _CODE_TO_DTYPE[code]
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(dims)
        off += count * dtype.itemsize
        if name in tensors:
            raise DataError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = arr.copy()
    meta_arr = tensors.pop(META_NAME, None)
    config, step, extra = None, 0, {}
    if meta_arr is not None:
        meta = json.loads(meta_arr.tobytes().decode("utf-8"))
        config, step, extra = meta.get("config"), meta.get("step", 0), meta.get("extra", {})
    return Checkpoint(tensors, config, step, extra)


def checkpoint_average(paths: list[str]) -> Checkpoint:
    """Elementwise mean of the named tensors across checkpoints.

    Accumulation happens in float64 and is cast back to each tensor's own
    dtype, so averaging identical inputs reproduces them bit-exactly.
    """
    if not paths:
        raise DataError("no checkpoints to average")
    ckpts = [load_checkpoint(p) for p in paths]
    names = set(ckpts[0].tensors)
    for p, c in zip(paths[1:], ckpts[1:]):
        if set(c.tensors) != names:
            raise DataError(f"{p}: tensor names differ from {paths[0]}")
        for n in names:
            if c.tensors[n].shape != ckpts[0].tensors[n].shape:
                raise DataError(f"{p}: {n} shape {c.tensors[n].shape} != "
                                f"{ckpts[0].tensors[n].shape}")
    avg = {}
    for n in names:
        stack = np.stack([c.tensors[n].astype(np.float64) for c in ckpts])
        avg[n] = stack.mean(axis=0).astype(ckpts[0].tensors[n].dtype)
    last = ckpts[-1]
    extra = dict(last.extra)
    extra["averaged_from"] = [os.path.basename(p) for p in paths]
    return Checkpoint(avg, last.config, last.step, extra)


def save_model(path: str, model, step: int = 0, extra: dict | None = None):
    from .model import ModelConfig  # local import to avoid a cycle
    assert isinstance(model.config, ModelConfig)
    save_checkpoint(path, model.state(), json.loads(model.config.to_json(None)),
                    step=step, extra=extra)


def load_model(path: str, dtype=np.float32):
    from .model import Model, ModelConfig
    ckpt = load_checkpoint(path)
    if ckpt.config is None:
        raise DataError(f"{path}: checkpoint has no model config snapshot")
    model = Model(ModelConfig(**ckpt.config), seed=0, dtype=dtype)
    model.load_state(ckpt.tensors)
    return model, ckpt
