"""Binary checkpoint format.

Layout (little-endian)::

    b"FOCA" | version: u16
    mode:   u16 length + UTF-8 bytes
    config: u32 length + UTF-8 JSON (model config, train config, classes)
    blocks: u32 count, then per block
            u16 name length + UTF-8 name | u8 ndim | ndim * u32 dims
            | prod(dims) float64 values
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from .model import ModelConfig, build_model

MAGIC = b"FOCA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(model: nn.Module, mode: str, config: dict) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    tag = mode.encode()
    parts += [struct.pack("<H", len(tag)), tag]
    blob = json.dumps(config, sort_keys=True).encode()
    parts += [struct.pack("<I", len(blob)), blob]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, t in state.items():
        raw_name = name.encode()
        arr = t.detach().cpu().numpy().astype("<f8")
        parts += [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<B", arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode(raw: bytes) -> tuple[str, dict, "OrderedDict[str, np.ndarray]"]:
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = view[pos : pos + n]
        pos += n
        return out

    def unpack(fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(take(s.size))

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a FOCA checkpoint")
    (version,) = unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = unpack("<H")
    mode = bytes(take(n)).decode()
    (n,) = unpack("<I")
    config = json.loads(bytes(take(n)))
    (count,) = unpack("<I")
    blocks: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = unpack("<H")
        name = bytes(take(n)).decode()
        (ndim,) = unpack("<B")
        shape = unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
    if pos != len(view):
        raise CheckpointError("trailing bytes after last block")
    return mode, config, blocks


def save(path, model: nn.Module, mode: str, config: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(model, mode, config))


def load(path) -> tuple[nn.Module, dict]:
    """Rebuild the network stored at ``path``; returns ``(model, config)``."""
    with open(path, "rb") as fh:
        mode, config, blocks = decode(fh.read())
    mcfg = ModelConfig(**config["model"])
    if mcfg.mode != mode:
        raise CheckpointError(f"mode tag {mode!r} disagrees with config mode {mcfg.mode!r}")
    model = build_model(mcfg)
    state = OrderedDict((k, torch.from_numpy(v)) for k, v in blocks.items())
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"parameter blocks do not match the model: {exc}") from None
    model.eval()
    return model, config
