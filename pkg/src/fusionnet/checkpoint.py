"""Checkpoint files.

Layout: ``b"FCKP"``, a version byte, a little-endian u32 header length, a
UTF-8 JSON header (ModelSpec, parameter index, metadata) and the
concatenated little-endian float64 parameter blocks in index order.
"""
import json
import os
import struct

import numpy as np

from .models import build_model, normalise_model_spec

MAGIC = b"FCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, model_spec, meta=None):
    state = model.state_dict()
    index, offset = [], 0
    for name, arr in state.items():
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = json.dumps({"model_spec": normalise_model_spec(model_spec), "params": index,
                         "meta": meta or {}}, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in state.values())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]) + struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(body)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return ``(header, state_dict)`` without building a model."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC or len(buf) < 9:
        raise CheckpointError(f"{path} is not a checkpoint")
    if buf[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {buf[4]}")
    (n,) = struct.unpack_from("<I", buf, 5)
    header = json.loads(buf[9:9 + n].decode())
    data = np.frombuffer(buf[9 + n:], dtype="<f8")
    state = {}
    for entry in header["params"]:
        size = int(np.prod(entry["shape"]))
        chunk = data[entry["offset"]:entry["offset"] + size]
        if chunk.size != size:
            raise CheckpointError(f"truncated block for {entry['name']}")
        state[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    return header, state


def load_checkpoint(path):
    """Return ``(model, header)`` with the model in eval mode."""
    header, state = read_checkpoint(path)
    model = build_model(header["model_spec"])
    model.load_state_dict(state)
    model.eval()
    return model, header
