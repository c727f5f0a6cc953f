"""Flat binary model checkpoints with bit-exact round-trip.

Layout (all integers little-endian):

    magic    4 bytes  b"ETL1"
    arch     u8       0=vanilla, 1=informer, 2=patchtst
    cfg_len  u32      length of the UTF-8 config JSON
    cfg      bytes    ModelConfig fields as JSON
    count    u32      number of parameter blobs
    then per parameter, in canonical (construction) order:
      name_len u16, name bytes (UTF-8)
      ndim     u8,  dims ndim x u32
      data     float64 little-endian, C order

Parameter order and names come from the model's insertion-ordered
parameter dict, so save -> load -> save reproduces identical bytes.
"""

import dataclasses
import json
import struct

import numpy as np

from .errors import FormatError
from .models import ARCHITECTURES, ModelConfig, build_model
from .rng import RunRng

MAGIC = b"ETL1"


def checkpoint_bytes(model):
    """Serialize a forecaster to the flat binary format."""
    cfg = model.config
    cfg_json = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", ARCHITECTURES.index(cfg.arch))
    out += struct.pack("<I", len(cfg_json))
    out += cfg_json
    out += struct.pack("<I", len(model.params))
    for name, p in model.params.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def save_checkpoint(model, path):
    data = checkpoint_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def _read(buf, offset, fmt):
    size = struct.calcsize(fmt)
    if offset + size > len(buf):
        raise FormatError("truncated checkpoint")
    return struct.unpack_from(fmt, buf, offset), offset + size


def load_checkpoint_bytes(buf):
    """Parse checkpoint bytes; returns (ModelConfig, {name: array})."""
    if buf[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    offset = 4
    (arch_id,), offset = _read(buf, offset, "<B")
    if arch_id >= len(ARCHITECTURES):
        raise FormatError(f"unknown architecture id {arch_id}")
    (cfg_len,), offset = _read(buf, offset, "<I")
    try:
        cfg_dict = json.loads(buf[offset : offset + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad config block: {exc}") from exc
    offset += cfg_len
    config = ModelConfig(**cfg_dict)
    if config.arch != ARCHITECTURES[arch_id]:
        raise FormatError("config arch does not match header arch id")
    (count,), offset = _read(buf, offset, "<I")
    arrays = {}
    for _ in range(count):
        (name_len,), offset = _read(buf, offset, "<H")
        name = buf[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,), offset = _read(buf, offset, "<B")
        dims, offset = _read(buf, offset, f"<{ndim}I")
        n_bytes = int(np.prod(dims, dtype=np.int64)) * 8 if ndim else 8
        arr = np.frombuffer(buf[offset : offset + n_bytes], dtype="<f8").reshape(dims)
        offset += n_bytes
        arrays[name] = arr.astype(np.float64)
    return config, arrays


def load_checkpoint(path, seed=0):
    """Rebuild a forecaster from a checkpoint file.

    The model skeleton is constructed with a throwaway init stream and all
    parameters are then overwritten, so ``seed`` does not affect weights.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    config, arrays = load_checkpoint_bytes(buf)
    model = build_model(config, RunRng(seed))
    model.load_state_arrays(arrays)
    return model
