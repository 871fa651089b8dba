"""Versioned binary checkpoints.

Layout::

    b"MCNN"                 magic
    uint32 LE               format version
    uint32 LE               length of the JSON header
    JSON header             {"arch": ..., "params": [[name, shape], ...]}
    float32 LE blobs        one per parameter, in header order

Training metadata (seed, epochs, losses) goes to a sidecar ``<file>.json``.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import IoError, NoCheckpoint
from .layers import Module

MAGIC = b"MCNN"
VERSION = 1


def save(path: str | os.PathLike, net: Module, arch: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    named = list(net.named_parameters())
    header = json.dumps({"arch": arch, "params": [[n, list(p.shape)] for n, p in named]},
                        sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(header)))
            fh.write(header)
            for _, p in named:
                fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        if meta is not None:
            with open(sidecar(path), "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def sidecar(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read(path: str | os.PathLike) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    """Architecture descriptor and named float32 arrays."""
    path = Path(path)
    if not path.is_file():
        raise NoCheckpoint(f"no checkpoint at {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise NoCheckpoint(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise NoCheckpoint(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    off = 12 + hlen
    arrays = []
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        if off + 4 * count > len(raw):
            raise NoCheckpoint(f"{path}: truncated parameter data")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        arrays.append((name, arr.astype(np.float32)))
        off += 4 * count
    if off != len(raw):
        raise NoCheckpoint(f"{path}: trailing or missing parameter data")
    return header["arch"], arrays


def load_into(net: Module, arrays: list[tuple[str, np.ndarray]]) -> None:
    named = list(net.named_parameters())
    if [n for n, _ in named] != [n for n, _ in arrays]:
        raise NoCheckpoint("checkpoint parameters do not match the network layout")
    for (_, p), (_, a) in zip(named, arrays):
        if p.shape != a.shape:
            raise NoCheckpoint(f"parameter shape {a.shape} does not fit {p.shape}")
        p.data = a.astype(p.data.dtype)
