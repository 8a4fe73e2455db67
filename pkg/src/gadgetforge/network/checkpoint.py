"""Binary model checkpoints.

Layout (little-endian):
    b"GFMB" | u32 version | 16 ascii bytes config digest
    u32 n | n bytes JSON {config, scaler, embedding_digest, history, meta}
    u32 sections, each: u16 name length | name | u8 ndim | u32 dims... | float64 data
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..errors import CheckpointError, ConfigDigestMismatch
from ..kan import FeatureScaler
from .model import ModelBundle, ModelConfig, init_model

MAGIC = b"GFMB"
VERSION = 1


def dumps_model(model: ModelBundle) -> bytes:
    meta = {
        "config": model.config.to_json(),
        "scaler": model.scaler.to_json() if model.scaler is not None and model.scaler.fitted else None,
        "embedding_digest": model.embedding_digest,
        "history": model.history,
        "meta": model.meta,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), model.config_digest.encode("ascii"),
             struct.pack("<I", len(blob)), blob, struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_model(model: ModelBundle, path) -> None:
    Path(path).write_bytes(dumps_model(model))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_model(raw: bytes, embeddings=None) -> ModelBundle:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(16).decode("ascii")
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n).decode("utf-8"))
    config = ModelConfig.from_json(meta["config"])
    if config.digest != digest:
        raise ConfigDigestMismatch(f"header digest {digest} does not match stored config {config.digest}")
    scaler = FeatureScaler.from_json(meta["scaler"]) if meta.get("scaler") else None
    model = init_model(config, None, meta.get("embedding_digest", ""), scaler)
    model.history = meta.get("history", [])
    model.meta = meta.get("meta", {})
    (count,) = r.unpack("<I")
    seen = OrderedDict()
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape)
        seen[name] = arr
    if r.pos != len(raw):
        raise CheckpointError("trailing bytes after last section")
    if list(seen) != list(model.params):
        raise CheckpointError("parameter sections do not match the configuration")
    for name, arr in seen.items():
        t: Tensor = model.params[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} vs expected {t.shape}")
        t.data[...] = arr
    if embeddings is not None:
        model.embeddings = np.asarray(embeddings, dtype=np.float64)
    return model


def load_model(path, embeddings=None) -> ModelBundle:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return loads_model(raw, embeddings)
    except ConfigDigestMismatch as exc:
        raise ConfigDigestMismatch(f"{path}: {exc}") from None
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
