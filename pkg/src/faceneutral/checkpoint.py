"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic           8 bytes  b"FNMESHV1"
    version         uint32
    topology hash   32 bytes (SHA-256 of the training connectivity)
    n               uint64   vertices
    s               uint64   training subjects
    e_max           float64  dominant Laplacian eigenvalue used for rescaling
    centroid        3x float64  \\  corpus normalization: model space is
    scale           float64     /  (coords - centroid) / scale
    subjects        uint32 count, then per subject uint32 length + UTF-8
    config echo     uint32 length + UTF-8 (canonical key = value text)
    parameters      uint32 count, then per block:
                      uint32 name length + UTF-8 name
                      uint8 ndim + ndim x uint64 dims
                      raw float64 data, C order

Parameter blocks are written in the fixed ``named_arrays`` order, so
loading a file and saving it again reproduces it byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .config import TrainConfig, parse_config_text
from .models import ModelParams, params_from_named

MAGIC = b"FNMESHV1"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


@dataclass
class ModelCheckpoint:
    params: ModelParams
    topology_hash: bytes
    e_max: float
    centroid: np.ndarray
    scale: float
    subjects: list
    config_text: str
    version: int = VERSION

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        if len(self.topology_hash) != 32:
            raise CheckpointError("topology hash must be 32 bytes")
        if self.scale <= 0:
            raise CheckpointError(f"scale must be positive, got {self.scale}")

    @cached_property
    def config(self) -> TrainConfig:
        return parse_config_text(self.config_text)

    def label_of(self, index: int) -> str:
        return self.subjects[index]


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    chunks = [MAGIC, struct.pack("<I", ckpt.version)]
    chunks.append(ckpt.topology_hash)
    chunks.append(struct.pack("<QQ", ckpt.params.n, ckpt.params.s))
    chunks.append(struct.pack("<d", float(ckpt.e_max)))
    chunks.append(np.asarray(ckpt.centroid, dtype="<f8").tobytes())
    chunks.append(struct.pack("<d", float(ckpt.scale)))
    chunks.append(struct.pack("<I", len(ckpt.subjects)))
    for subject in ckpt.subjects:
        raw = subject.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
    cfg = ckpt.config_text.encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg)) + cfg)
    named = ckpt.params.named_arrays()
    chunks.append(struct.pack("<I", len(named)))
    for name, arr in named:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (length,) = self.unpack("<I")
        return self.take(length).decode("utf-8")


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    topo_hash = reader.take(32)
    n, s = reader.unpack("<QQ")
    (e_max,) = reader.unpack("<d")
    centroid = np.frombuffer(reader.take(24), dtype="<f8").astype(np.float64)
    (scale,) = reader.unpack("<d")
    (n_subjects,) = reader.unpack("<I")
    subjects = [reader.string() for _ in range(n_subjects)]
    config_text = reader.string()
    (n_blocks,) = reader.unpack("<I")
    arrays = {}
    for _ in range(n_blocks):
        name = reader.string()
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(dims)) if dims else 1
        flat = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
        arrays[name] = flat.reshape(dims)
    if reader.pos != len(reader.data):
        raise CheckpointError(f"{path}: {len(reader.data) - reader.pos} trailing bytes")
    params = params_from_named(int(n), int(s), arrays)
    return ModelCheckpoint(
        params=params,
        topology_hash=topo_hash,
        e_max=float(e_max),
        centroid=centroid,
        scale=float(scale),
        subjects=subjects,
        config_text=config_text,
        version=version,
    )
