"""Versioned binary checkpoints holding a named float64 tensor table.

Layout (little-endian)::

    b"CPGK"  u32 version  u64 iteration
    u32 len  config text (utf-8)
    u32 count, then per tensor:
        u16 len  name (utf-8)   u8 ndim   u32 dims[ndim]   f64 values[prod(dims)]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor

MAGIC = b"CPGK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    config_text: str = ""
    version: int = VERSION


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", ckpt.version, ckpt.iteration)]
    cfg = ckpt.config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic header")
    version, iteration = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    config_text = buf[pos : pos + n].decode("utf-8")
    pos += n
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        tensors[name] = arr.astype(np.float64)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes in checkpoint")
    return Checkpoint(tensors, iteration, config_text, version)


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def pack_params(params: dict[str, Tensor], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}{k}": p.data.copy() for k, p in params.items()}


def unpack_params(table: dict[str, np.ndarray], params: dict[str, Tensor], prefix: str) -> None:
    """Copy stored values into ``params``; every name and shape must match."""
    stored = {k[len(prefix):] for k in table if k.startswith(prefix)}
    missing = set(params) - stored
    extra = stored - set(params)
    if missing or extra:
        raise CheckpointError(f"checkpoint/config mismatch under {prefix!r}: "
                              f"missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
    for k, p in params.items():
        arr = table[prefix + k]
        if arr.shape != p.shape:
            raise CheckpointError(f"shape mismatch for {prefix}{k}: checkpoint {arr.shape}, model {p.shape}")
        p.data[...] = arr


def pack_optimizer(opt: Adam, prefix: str) -> dict[str, np.ndarray]:
    st = opt.state
    out = {
        f"{prefix}step": np.array(float(st.step)),
        f"{prefix}hyper": np.array([st.lr, st.beta1, st.beta2, st.eps]),
    }
    for k in opt.params:
        out[f"{prefix}m.{k}"] = st.m[k].copy()
        out[f"{prefix}v.{k}"] = st.v[k].copy()
    return out


def unpack_optimizer(table: dict[str, np.ndarray], opt: Adam, prefix: str) -> None:
    st = opt.state
    try:
        st.step = int(table[f"{prefix}step"])
        st.lr, st.beta1, st.beta2, st.eps = (float(v) for v in table[f"{prefix}hyper"])
        for k in opt.params:
            st.m[k] = table[f"{prefix}m.{k}"].copy()
            st.v[k] = table[f"{prefix}v.{k}"].copy()
    except KeyError as exc:
        raise CheckpointError(f"optimizer state missing {exc.args[0]}") from None
