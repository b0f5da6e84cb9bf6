"""Versioned binary checkpoint container.

Layout::

    b"GMIXCKPT"                      8-byte ascii magic
    uint32 LE                        format version
    uint64 LE                        header length in bytes
    header                           UTF-8 JSON (sorted keys): config, counters,
                                     rng state, metadata and the tensor table
                                     (name, shape, offset, nbytes)
    blocks                           little-endian float32 tensor data, in table order

Offsets are relative to the end of the header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GMIXCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    epoch: int = 0
    adam_t: int = 0
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def _encode(ckpt: Checkpoint) -> bytes:
    table, blocks, offset = [], [], 0
    for name, value in ckpt.tensors.items():
        data = np.ascontiguousarray(value, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(data)})
        blocks.append(data)
        offset += len(data)
    header = {
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam_t,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "tensors": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(blocks)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_encode(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for the container prefix")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(raw) < start + head_len:
        raise CheckpointError(f"{path}: truncated header ({len(raw) - start} of {head_len} bytes)")
    try:
        header = json.loads(raw[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    base = start + head_len
    tensors = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if entry["nbytes"] != expected:
            raise CheckpointError(f"{path}: block {name!r} has {entry['nbytes']} bytes, shape {shape} needs {expected}")
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise CheckpointError(f"{path}: block {name!r} truncated ({max(len(raw) - lo, 0)} of {expected} bytes)")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=expected // 4, offset=lo).reshape(shape).astype(np.float32)
    end = base + sum(e["nbytes"] for e in header["tensors"])
    if end != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - end} trailing bytes after the last block")
    return Checkpoint(header["config"], tensors, header["epoch"], header["adam_t"], header["rng_state"],
                      header["meta"])
