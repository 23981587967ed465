"""Versioned binary checkpoints.

Layout::

    8 bytes   magic b"HARLCKPT"
    4 bytes   format version, little-endian uint32
    8 bytes   header length N, little-endian uint64
    N bytes   UTF-8 JSON header (sorted keys)
    rest      concatenated little-endian float64 arrays

The header lists every array as ``{group, path, shape, offset, count}``
(offset and count in elements) plus free-form ``meta``. Output is a pure
function of the contents, so equal states give byte-identical files.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import ParamStore
from .training import AdamState, EpochReport, TrainState, report_row

MAGIC = b"HARLCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    adam: AdamState | None = None
    train_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # group -> {path: array}


def encode(ckpt):
    groups = [("params", ckpt.params.values), ("buffers", ckpt.params.buffers)]
    if ckpt.adam is not None:
        groups += [("adam.m", ckpt.adam.m), ("adam.v", ckpt.adam.v)]
    groups += sorted(ckpt.extra.items())
    entries, blobs, offset = [], [], 0
    for group, arrays in groups:
        for path in sorted(arrays):
            arr = np.ascontiguousarray(arrays[path], dtype="<f8")
            entries.append({"group": group, "path": path, "shape": list(arr.shape),
                            "offset": offset, "count": int(arr.size)})
            blobs.append(arr.tobytes())
            offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "dtype": "float64",
        "entries": entries,
        "adam_t": ckpt.adam.t if ckpt.adam is not None else None,
        "train_state": ckpt.train_state,
        "meta": ckpt.meta,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def decode(raw, source="<bytes>"):
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
    (hlen,) = struct.unpack("<Q", raw[12:20])
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    data = np.frombuffer(raw, dtype="<f8", offset=20 + hlen)
    groups = {}
    for e in header["entries"]:
        arr = data[e["offset"] : e["offset"] + e["count"]].astype(np.float64).reshape(e["shape"])
        groups.setdefault(e["group"], {})[e["path"]] = arr
    store = ParamStore(groups.pop("params", {}), groups.pop("buffers", {}))
    adam = None
    if "adam.m" in groups:
        adam = AdamState(groups.pop("adam.m"), groups.pop("adam.v"), header["adam_t"])
    return Checkpoint(store, adam, header.get("train_state") or {}, header.get("meta") or {}, groups)


def atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, ckpt):
    atomic_write_bytes(path, encode(ckpt))


def load(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), str(path))


def rng_state_to_json(state):
    # PCG64 state holds 128-bit ints; JSON keeps them exact as integers
    return json.loads(json.dumps(state))


def train_state_payload(state):
    out = {"epoch": state.epoch, "rng_state": rng_state_to_json(state.rng_state)}
    if state.best_report is not None:
        # wall time would make otherwise identical runs differ byte-wise
        out["best_report"] = {**report_row(state.best_report), "wall_time": 0.0}
    return out


def resume_state(ckpt):
    """Rebuild a :class:`TrainState` from a checkpoint written mid-run."""
    ts = ckpt.train_state
    if ckpt.adam is None or "rng_state" not in ts:
        raise CheckpointError("checkpoint carries no optimizer/RNG state to resume from")
    best = ckpt.extra.get("best.params")
    best_store = None
    if best is not None:
        best_store = ParamStore(best, ckpt.extra.get("best.buffers", {}))
    best_report = EpochReport(**ts["best_report"]) if "best_report" in ts else None
    return TrainState(int(ts["epoch"]), ckpt.adam.copy(), ts["rng_state"], best_store, best_report)
