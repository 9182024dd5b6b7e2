"""
Kontajner pomenovaných tenzorov.

Rozloženie súboru:
    8 B    magic b"EDUQALM1"
    8 B    dĺžka manifestu, u64 little-endian
    N B    manifest - JSON (UTF-8, zoradené kľúče, bez medzier)
    ...    dáta tenzorov za sebou, little-endian, row-major, v poradí manifestu

Manifest: {"format_version", "kind" ("model" | "adapter"), "config", "meta",
"tensors": [{"name", "dtype" ("f32" | "f64"), "shape", "offset", "nbytes"}],
"adapters": {target: {"rank", "alpha", "dropout"}}}. offset je relatívny k začiatku dát.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from engine import lora
from engine import numerics as nx
from engine.model import DecoderModel, ModelConfig
from exceptions import CheckpointError, ConfigError, LabError
from utils.fileio import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"EDUQALM1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<Q")

_DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    adapters: dict[str, dict] = field(default_factory=dict)


def encode(ckpt: Checkpoint) -> bytes:
    entries, payloads, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        tag = _TAG_OF.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes()
        entries.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "tensors": entries,
        "adapters": ckpt.adapters,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return MAGIC + HEADER.pack(len(blob)) + blob + b"".join(payloads)


def decode(data: bytes) -> Checkpoint:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    start = len(MAGIC) + HEADER.size
    if len(data) < start:
        raise CheckpointError("truncated checkpoint header")
    (length,) = HEADER.unpack(data[len(MAGIC):start])
    try:
        manifest = json.loads(data[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {manifest.get('format_version')!r}")
    if manifest.get("kind") not in ("model", "adapter"):
        raise CheckpointError(f"unknown checkpoint kind {manifest.get('kind')!r}")
    base = start + length
    tensors = {}
    for entry in manifest.get("tensors", []):
        dtype = _DTYPE_TAGS.get(entry.get("dtype"))
        if dtype is None:
            raise CheckpointError(f"tensor '{entry.get('name')}' has unknown dtype tag {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        begin, nbytes = base + entry["offset"], entry["nbytes"]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize or begin + nbytes > len(data):
            raise CheckpointError(f"tensor '{entry['name']}' payload does not match its manifest entry")
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=begin)
        tensors[entry["name"]] = arr.reshape(shape).astype(dtype.type)
    return Checkpoint(manifest["kind"], manifest.get("config", {}), tensors, manifest.get("meta", {}),
                      manifest.get("adapters", {}))


def write_checkpoint(ckpt: Checkpoint, path: Path) -> None:
    atomic_write_bytes(path, encode(ckpt))
    logger.info("checkpoint (%s, %d tensors) written to %s", ckpt.kind, len(ckpt.tensors), path)


def read_checkpoint(path: Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    return decode(data)


def save_model(model: DecoderModel, path: Path, meta: Optional[dict] = None) -> None:
    """Uloží bázové váhy (adaptéry nie - na to je save_adapters)."""
    tensors = {name: t.data for name, t in model.params.items()}
    meta = {"seed": model.seed, **(meta or {})}
    write_checkpoint(Checkpoint("model", model.config.to_dict(), tensors, meta), path)


def save_adapters(model: DecoderModel, path: Path, meta: Optional[dict] = None) -> None:
    specs = {target: a.hyperparams() for target, a in model.adapters.items()}
    meta = {"seed": model.seed, **(meta or {})}
    write_checkpoint(Checkpoint("adapter", model.config.to_dict(), lora.adapter_state(model), meta, specs), path)


def load_model(path: Path) -> tuple[DecoderModel, Checkpoint]:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "model":
        raise CheckpointError(f"{path} holds '{ckpt.kind}' tensors, expected a model checkpoint")
    try:
        config = ModelConfig.from_dict(ckpt.config)
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} carries an invalid model config: {exc}") from exc
    dtype = next(iter(ckpt.tensors.values())).dtype if ckpt.tensors else np.float32
    with nx.precision("float64" if dtype == np.float64 else "float32"):
        model = DecoderModel(config, seed=int(ckpt.meta.get("seed", 0)), init="zeros")
    try:
        model.load_state(ckpt.tensors)
    except LabError as exc:
        raise CheckpointError(f"checkpoint {path}: {exc}") from exc
    return model, ckpt


def load_adapters_into(model: DecoderModel, path: Path) -> Checkpoint:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "adapter":
        raise CheckpointError(f"{path} holds '{ckpt.kind}' tensors, expected an adapter checkpoint")
    if ckpt.config != model.config.to_dict():
        raise CheckpointError(f"adapter checkpoint {path} was trained for a different model config")
    try:
        lora.load_adapters(model, ckpt.adapters, ckpt.tensors)
    except LabError as exc:
        raise CheckpointError(f"adapter checkpoint {path}: {exc}") from exc
    return ckpt
