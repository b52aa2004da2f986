"""Versioned binary checkpoints of model parameters and Adam state.

Layout (little-endian)::

    8 bytes   magic  b"KGINCKPT"
    u32       format version (1)
    u64       header length H
    H bytes   UTF-8 JSON header, keys sorted:
              {"adam": {"t": int} | null, "config": {...},
               "tables": [{"name": str, "rows": int, "cols": int}, ...]}
    then for each table in header order: rows*cols float64 values
    then, if adam is present: first moments for each table, then second moments
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Adam, ParamTable
from .config import TrainConfig
from .params import ModelParams

MAGIC = b"KGINCKPT"
VERSION = 1
_TABLE_ORDER = ("user", "entity", "relation", "intent_logits")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, cfg: TrainConfig, adam: Adam | None = None) -> None:
    tables = params.tables()
    header = {
        "adam": {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
        if adam is not None else None,
        "config": cfg.to_dict(),
        "tables": [{"name": t.name, "rows": t.shape[0], "cols": t.shape[1]} for t in tables],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for t in tables:
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
        if adam is not None:
            for store in (adam.m, adam.v):
                for t in tables:
                    arr = store.get(t.name, np.zeros_like(t.values))
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig, Adam | None]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 8 + struct.calcsize("<IQ")
    header = json.loads(data[offset:offset + hlen].decode())
    offset += hlen

    def read(rows, cols):
        nonlocal offset
        n = rows * cols
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(rows, cols)
        offset += 8 * n
        return arr

    specs = header["tables"]
    if tuple(s["name"] for s in specs) != _TABLE_ORDER:
        raise CheckpointError(f"{path}: unexpected tables {[s['name'] for s in specs]}")
    tables = {s["name"]: ParamTable(s["name"], read(s["rows"], s["cols"])) for s in specs}
    adam = None
    if header["adam"] is not None:
        a = header["adam"]
        adam = Adam(a["lr"], a["beta1"], a["beta2"], a["eps"])
        adam.t = a["t"]
        adam.m = {s["name"]: read(s["rows"], s["cols"]) for s in specs}
        adam.v = {s["name"]: read(s["rows"], s["cols"]) for s in specs}
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    params = ModelParams(*(tables[n] for n in _TABLE_ORDER))
    return params, TrainConfig.from_dict(header["config"]), adam
