"""SSCK checkpoint files.

Layout, little-endian: magic "SSCK", u32 version, u32 config length, config text
(UTF-8 key=value lines), u64 training step, u64 optimizer step, u32 tensor count,
then per tensor: u16 name length, name, u8 rank, u32 dims, f32 payload. Optimizer
moments are stored as tensors named "optim.exp_avg.<param>" and
"optim.exp_avg_sq.<param>". A u32 CRC-32 of everything before it closes the file.
"""
from __future__ import annotations

import struct
import tempfile
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import CheckpointError
from .nn import Module
from .optim import AdamW
from .util import ensure_dir

MAGIC = b"SSCK"
VERSION = 1
EXP_AVG = "optim.exp_avg."
EXP_AVG_SQ = "optim.exp_avg_sq."
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass
class Checkpoint:
    config_text: str
    step: int
    tensors: "OrderedDict[str, np.ndarray]"
    optimizer_step: int = 0
    version: int = VERSION

    def model_state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith("optim."))

    def optimizer_moments(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        avg = {k[len(EXP_AVG):]: v for k, v in self.tensors.items() if k.startswith(EXP_AVG)}
        avg_sq = {k[len(EXP_AVG_SQ):]: v for k, v in self.tensors.items() if k.startswith(EXP_AVG_SQ)}
        return avg, avg_sq


def capture(model: Module, optimizer: Optional[AdamW], step: int, config_text: str) -> Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict(model.state_dict())
    optimizer_step = 0
    if optimizer is not None:
        names = [name for name, _ in model.named_parameters()]
        if len(names) != len(optimizer.params):
            raise CheckpointError("optimizer does not track the model's parameters")
        for name, m in zip(names, optimizer.state.exp_avg):
            tensors[EXP_AVG + name] = m.copy()
        for name, v in zip(names, optimizer.state.exp_avg_sq):
            tensors[EXP_AVG_SQ + name] = v.copy()
        optimizer_step = optimizer.state.step
    return Checkpoint(config_text, int(step), tensors, optimizer_step)


def encode(ckpt: Checkpoint) -> bytes:
    config = ckpt.config_text.encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(config)), config]
    parts += [_U64.pack(ckpt.step), _U64.pack(ckpt.optimizer_step), _U32.pack(len(ckpt.tensors))]
    for name, value in ckpt.tensors.items():
        raw_name = name.encode("utf-8")
        array = np.asarray(value)
        if array.ndim > 255 or len(raw_name) > 0xFFFF:
            raise CheckpointError(f"tensor {name!r} cannot be stored (rank {array.ndim})")
        parts.append(_U16.pack(len(raw_name)) + raw_name + bytes([array.ndim]))
        parts.append(b"".join(_U32.pack(dim) for dim in array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: struct.Struct, what: str) -> int:
        return fmt.unpack(self.take(fmt.size, what))[0]


def decode(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError(f"not an SSCK checkpoint (magic {data[:4]!r})")
    body, tail = data[:-4], data[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != _U32.unpack(tail)[0]:
        raise CheckpointError("checkpoint checksum mismatch")
    reader = _Reader(body)
    reader.take(4, "magic")
    version = reader.unpack(_U32, "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; this reader understands version {VERSION}")
    config_text = reader.take(reader.unpack(_U32, "config length"), "config").decode("utf-8")
    step = reader.unpack(_U64, "step")
    optimizer_step = reader.unpack(_U64, "optimizer step")
    count = reader.unpack(_U32, "tensor count")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for index in range(count):
        name = reader.take(reader.unpack(_U16, f"name length of tensor {index}"), f"name of tensor {index}").decode("utf-8")
        rank = reader.take(1, f"rank of {name}")[0]
        shape = tuple(reader.unpack(_U32, f"dims of {name}") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(4 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if reader.pos != len(body):
        raise CheckpointError(f"{len(body) - reader.pos} trailing bytes after the last tensor")
    return Checkpoint(config_text, step, tensors, optimizer_step, version)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    ensure_dir(path)
    with tempfile.NamedTemporaryFile("wb", delete=False, dir=path.parent) as tmp:
        tmp.write(encode(ckpt))
        tmp.flush()
    Path(tmp.name).replace(path)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return decode(path.read_bytes())


def restore(ckpt: Checkpoint, model: Module, optimizer: Optional[AdamW] = None) -> int:
    """Load weights (every shape validated) and optimizer moments; returns the training step."""
    model.load_state_dict(ckpt.model_state())
    if optimizer is not None:
        avg, avg_sq = ckpt.optimizer_moments()
        names = [name for name, _ in model.named_parameters()]
        if set(avg) != set(names) or set(avg_sq) != set(names):
            raise CheckpointError("checkpoint optimizer moments do not cover the model's parameters")
        for index, (name, param) in enumerate(model.named_parameters()):
            if avg[name].shape != param.shape or avg_sq[name].shape != param.shape:
                raise CheckpointError(f"optimizer moment shape for {name} does not match {param.shape}")
            optimizer.state.exp_avg[index] = avg[name].astype(param.dtype, copy=True)
            optimizer.state.exp_avg_sq[index] = avg_sq[name].astype(param.dtype, copy=True)
        optimizer.state.step = ckpt.optimizer_step
    return ckpt.step
