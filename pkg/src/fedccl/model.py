"""Model snapshot types and the binary snapshot format.

Snapshot layout (all integers little-endian)::

    magic         4 bytes   b"FCCL"
    version       u8        1
    level         u8        0=global, 1=cluster, 2=local
    key_len       u16       0 when no cluster key
    cluster_key   key_len bytes, utf-8
    samples       u64
    epochs        u64
    round         u64
    n_layers      u32
    per layer:    ndim u8, then ndim x u32 dims
    payload       float64 little-endian, layers concatenated in C order

The payload length is fully determined by the shape block; trailing bytes
are rejected.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FCCL"
FORMAT_VERSION = 1


class Level(str, enum.Enum):
    GLOBAL = "global"
    CLUSTER = "cluster"
    LOCAL = "local"


_LEVEL_CODES = {Level.GLOBAL: 0, Level.CLUSTER: 1, Level.LOCAL: 2}
_CODE_LEVELS = {v: k for k, v in _LEVEL_CODES.items()}


class SnapshotError(ValueError):
    """Raised when a snapshot cannot be encoded."""


class SnapshotFormatError(ValueError):
    """Raised when bytes do not decode to a valid snapshot."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelMeta:
    level: Level = Level.GLOBAL
    cluster_key: str | None = None
    samples_learned: int = 0
    epochs_learned: int = 0
    round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if (self.level is Level.CLUSTER) != (self.cluster_key is not None):
            raise ValueError("cluster_key must be set exactly when level is 'cluster'")
        if self.cluster_key is not None and not self.cluster_key:
            raise ValueError("cluster_key must be non-empty")
        for name in ("samples_learned", "epochs_learned", "round"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TrainingDelta:
    samples_learned: int
    epochs_learned: int
    round: int = 1

    def __post_init__(self):
        if min(self.samples_learned, self.epochs_learned, self.round) < 1:
            raise ValueError("training delta fields must all be >= 1")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


class ModelWeights:
    """Ordered, read-only float64 layers."""

    __slots__ = ("layers",)

    def __init__(self, layers: Iterable):
        self.layers: tuple[np.ndarray, ...] = tuple(_frozen(x) for x in layers)

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(x.shape for x in self.layers)

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(x).all()) for x in self.layers)

    def flat(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([x.ravel() for x in self.layers])

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.layers[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        # bitwise comparison, so NaN payloads and -0.0 are distinguished
        return self.shapes == other.shapes and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self) -> str:
        return f"ModelWeights(shapes={self.shapes})"


@dataclass(frozen=True, eq=True)
class ModelSnapshot:
    meta: ModelMeta
    weights: ModelWeights = field(compare=True)

    def with_meta(self, **changes) -> "ModelSnapshot":
        fields = dict(
            level=self.meta.level,
            cluster_key=self.meta.cluster_key,
            samples_learned=self.meta.samples_learned,
            epochs_learned=self.meta.epochs_learned,
            round=self.meta.round,
        )
        fields.update(changes)
        return ModelSnapshot(ModelMeta(**fields), self.weights)

    @property
    def round(self) -> int:
        return self.meta.round

    @property
    def samples_learned(self) -> int:
        return self.meta.samples_learned


def check_same_shapes(a: ModelWeights, b: ModelWeights) -> None:
    if a.shapes != b.shapes:
        raise ShapeMismatchError(f"layer shapes differ: {a.shapes} vs {b.shapes}")


def serialize_snapshot(s: ModelSnapshot) -> bytes:
    if not s.weights.is_finite():
        raise SnapshotError("snapshot contains non-finite weight values")
    meta = s.meta
    key = (meta.cluster_key or "").encode("utf-8")
    if len(key) > 0xFFFF:
        raise SnapshotError("cluster key too long")
    parts = [
        MAGIC,
        struct.pack("<BBH", FORMAT_VERSION, _LEVEL_CODES[meta.level], len(key)),
        key,
        struct.pack("<QQQI", meta.samples_learned, meta.epochs_learned, meta.round,
                    len(s.weights)),
    ]
    for layer in s.weights:
        parts.append(struct.pack("<B", layer.ndim))
        parts.append(struct.pack(f"<{layer.ndim}I", *layer.shape))
    for layer in s.weights:
        parts.append(np.ascontiguousarray(layer, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.data):
            raise SnapshotFormatError(
                f"truncated input: need {n} bytes for {what}, "
                f"{len(self.data) - self.pos} available", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def deserialize_snapshot(b: bytes) -> ModelSnapshot:
    r = _Reader(bytes(b))
    if bytes(r.take(4, "magic")) != MAGIC:
        raise SnapshotFormatError("bad magic bytes", 0)
    version, level_code, key_len = r.unpack("<BBH", "header")
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported format version {version}", 4)
    if level_code not in _CODE_LEVELS:
        raise SnapshotFormatError(f"unknown level code {level_code}", 5)
    key_off = r.pos
    try:
        key = bytes(r.take(key_len, "cluster key")).decode("utf-8") if key_len else None
    except UnicodeDecodeError:
        raise SnapshotFormatError("cluster key is not valid utf-8", key_off) from None
    samples, epochs, rnd, n_layers = r.unpack("<QQQI", "meta block")
    shapes = []
    for i in range(n_layers):
        (ndim,) = r.unpack("<B", f"layer {i} rank")
        shapes.append(r.unpack(f"<{ndim}I", f"layer {i} dims") if ndim else ())
    layers = []
    for i, shape in enumerate(shapes):
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        off = r.pos
        raw = r.take(8 * count, f"layer {i} payload")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if not np.isfinite(arr).all():
            raise SnapshotFormatError(f"non-finite value in layer {i}", off)
        layers.append(arr)
    if r.pos != len(r.data):
        raise SnapshotFormatError(f"{len(r.data) - r.pos} trailing bytes", r.pos)
    try:
        meta = ModelMeta(_CODE_LEVELS[level_code], key, samples, epochs, rnd)
    except ValueError as exc:
        raise SnapshotFormatError(str(exc), key_off) from None
    return ModelSnapshot(meta, ModelWeights(layers))


def make_snapshot(layers: Sequence, *, level: Level | str = Level.GLOBAL,
                  cluster_key: str | None = None, samples_learned: int = 0,
                  epochs_learned: int = 0, round: int = 0) -> ModelSnapshot:
    return ModelSnapshot(
        ModelMeta(Level(level), cluster_key, samples_learned, epochs_learned, round),
        ModelWeights(layers),
    )
