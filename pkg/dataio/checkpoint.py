"""
Checkpoint container.

    bytes 0-3   magic b"TRKC"
    bytes 4-5   u16 version
    bytes 6-9   u32 length L of the JSON manifest
    bytes 10-   L bytes UTF-8 JSON (sorted keys): config, variant, metric,
                epoch, optimizer settings and step count, and for every
                array its name, shape and byte offset into the payload
    then        every array as float32 little-endian, row-major, in
                manifest order

No timestamps are stored, so identical state gives identical bytes.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from reid.aggregation import AggregatorParams, AggregatorVariant
from reid.metrics import MetricKind, MetricParams
from reid.model import Model
from reid.optim import Adam
from reid.training import ModelCheckpoint, TrainConfig
from shared.errors import CheckpointError

MAGIC = b"TRKC"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


def encode_checkpoint(checkpoint: ModelCheckpoint) -> bytes:
    model = checkpoint.model
    arrays: Dict[str, np.ndarray] = dict(model.parameters())
    arrays.update(checkpoint.optimizer.state_arrays())

    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        chunk = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arrays[name].shape), "offset": offset})
        chunks.append(chunk)
        offset += len(chunk)

    opt = checkpoint.optimizer
    manifest = {
        "arrays": entries,
        "config": dataclasses.asdict(checkpoint.config),
        "epoch": checkpoint.epoch,
        "metric": model.metric.kind.value,
        "metric_dim": model.metric.dim,
        "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "epsilon": opt.epsilon, "t": opt.t},
        "variant": model.variant.value,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> ModelCheckpoint:
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{source}: truncated header")
    magic, version, length = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    start = _HEADER.size + length
    if len(raw) < start:
        raise CheckpointError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(raw[_HEADER.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: unreadable manifest ({e})")

    try:
        arrays: Dict[str, np.ndarray] = {}
        for item in manifest["arrays"]:
            shape = tuple(item["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            begin = start + item["offset"]
            if begin + 4 * count > len(raw):
                raise CheckpointError(f"{source}: truncated payload for {item['name']}")
            values = np.frombuffer(raw, dtype="<f4", count=count, offset=begin)
            arrays[item["name"]] = values.astype(np.float64).reshape(shape)

        adam_arrays = {k: v for k, v in arrays.items() if k.startswith("adam.")}
        kind = MetricKind(manifest["metric"])
        metric = MetricParams(kind, manifest["metric_dim"], w=arrays.get("w"), W=arrays.get("W"))
        config = TrainConfig(**manifest["config"])
        model = Model(AggregatorParams.from_arrays(arrays), metric, AggregatorVariant(manifest["variant"]))

        opt_cfg = manifest["optimizer"]
        optimizer = Adam(opt_cfg["lr"], opt_cfg["beta1"], opt_cfg["beta2"], opt_cfg["epsilon"])
        optimizer.load_state(opt_cfg["t"], adam_arrays)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source}: inconsistent contents ({e})")
    return ModelCheckpoint(model=model, config=config, epoch=manifest["epoch"], optimizer=optimizer)


def save_checkpoint(path: Union[str, Path], checkpoint: ModelCheckpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(checkpoint))


def load_checkpoint(path: Union[str, Path]) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        return decode_checkpoint(f.read(), str(path))
