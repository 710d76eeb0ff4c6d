"""Versioned parameter files.

Layout: one line of JSON (the header) terminated by ``\\n``, followed by the
raw little-endian float32 arrays in the order listed in ``header["layers"]``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MAGIC = "sdwnroute-checkpoint"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    kind: str
    arrays: dict[str, np.ndarray]
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arrays = {k: np.asarray(v, dtype="<f4") for k, v in self.arrays.items()}

    def header(self) -> dict:
        return {
            "magic": MAGIC,
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "layers": [{"name": k, "shape": list(v.shape)} for k, v in self.arrays.items()],
            "seed": self.seed,
            "config": self.config,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8") + b"\n"
        body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in self.arrays.values())
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        nl = data.find(b"\n")
        if nl < 0:
            raise CheckpointError("missing header line")
        try:
            header = json.loads(data[:nl].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable header: {exc}") from exc
        if header.get("magic") != MAGIC:
            raise CheckpointError("not a sdwnroute checkpoint")
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {header.get('format_version')}")
        offset = nl + 1
        arrays = {}
        for layer in header["layers"]:
            shape = tuple(layer["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = 4 * count
            if offset + nbytes > len(data):
                raise CheckpointError(f"truncated payload at layer {layer['name']!r} (byte {offset})")
            arrays[layer["name"]] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
            offset += nbytes
        if offset != len(data):
            raise CheckpointError(f"{len(data) - offset} trailing bytes after payload")
        return cls(kind=header["kind"], arrays=arrays, seed=header.get("seed"),
                   config=header.get("config", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


def params_to_arrays(params) -> dict[str, np.ndarray]:
    return {p.name: p.value for p in params}


def load_arrays_into(params, arrays: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in arrays:
            raise CheckpointError(f"checkpoint has no array {p.name!r}")
        a = arrays[p.name]
        if a.shape != p.value.shape:
            raise CheckpointError(f"shape mismatch for {p.name!r}: {a.shape} vs {p.value.shape}")
        p.value[...] = a.astype(np.float64)
