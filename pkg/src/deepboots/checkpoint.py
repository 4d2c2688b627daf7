"""Deterministic self-describing checkpoint files.

Layout: ``MAGIC`` | 8-byte little-endian header length | UTF-8 JSON header |
raw little-endian float64 payload.  The header lists every tensor's name,
shape and byte offset alongside the model config and arbitrary metadata.
Identical inputs always produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, _check_params
from .tensor import Tensor

MAGIC = b"DBOOTS\x00\x01"
NORM_POLICY = {"kind": "instance", "statistics": "input_window", "std": "population", "eps": 1e-5}


def save_checkpoint(path: str | Path, params: ModelParams, config: ModelConfig, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format": "deepboots-checkpoint",
        "version": 1,
        "dtype": "<f8",
        "config": config.to_dict(),
        "normalization": NORM_POLICY,
        "meta": meta or {},
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + n].decode("utf-8"))
    payload = memoryview(raw)[start + n :]
    config = ModelConfig.from_dict(header["config"])
    params: ModelParams = {}
    for e in header["tensors"]:
        arr = np.frombuffer(payload[e["offset"] : e["offset"] + e["nbytes"]], dtype="<f8")
        params[e["name"]] = Tensor(arr.reshape(e["shape"]).astype(np.float64), requires_grad=True)
    _check_params(params, config)
    return params, config, header.get("meta", {})
