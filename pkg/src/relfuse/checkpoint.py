"""Binary checkpoint container.

Layout, all little-endian: magic ``RFCK`` | u16 format version | u32 length
of a canonical-JSON metadata block | that JSON | zero or more records of
(u16 name length, name bytes, u8 rank, u32 dims[rank], float32 payload).
Records are written in sorted-name order, so save -> load -> save is
byte-identical.
"""

import json
import struct

import numpy as np

from .model import ModelConfig, expected_param_names, expected_state_names

MAGIC = b"RFCK"
VERSION = 1
STATE_PREFIX = "state/"


class CheckpointError(Exception):
    """Malformed, truncated, or inconsistent checkpoint file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _canonical_json(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, meta, arrays):
    """Write a metadata dict plus named float32 arrays."""
    parts = [MAGIC, struct.pack("<H", VERSION)]
    blob = _canonical_json(meta)
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"record name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"record rank {arr.ndim} exceeds 255 for {name!r}")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_container(path):
    """Read back (meta, arrays); raises CheckpointError with a byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0

    def need(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if need(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack("<H", need(2, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}", offset=4)
    (json_len,) = struct.unpack("<I", need(4, "metadata length"))
    blob = need(json_len, "metadata block")
    try:
        meta = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata block: {exc}", offset=10) from exc
    arrays = {}
    while pos < len(raw):
        record_start = pos
        (name_len,) = struct.unpack("<H", need(2, "record name length"))
        name = need(name_len, "record name").decode("utf-8")
        (rank,) = struct.unpack("<B", need(1, "record rank"))
        dims = struct.unpack(f"<{rank}I", need(4 * rank, "record dims"))
        count = 1
        for d in dims:
            count *= d
        payload = need(4 * count, f"payload of {name!r}")
        if name in arrays:
            raise CheckpointError(f"duplicate record {name!r}", offset=record_start)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return meta, arrays


def save_checkpoint(path, params, state, config):
    """Persist model parameters, running statistics, and the config."""
    meta = {"kind": "model", "config": config.to_dict()}
    arrays = dict(params)
    for name, value in state.items():
        arrays[STATE_PREFIX + name] = value
    write_container(path, meta, arrays)


def load_checkpoint(path):
    """Load (params, state, config); validates names against the config."""
    meta, arrays = read_container(path)
    if meta.get("kind") != "model":
        raise CheckpointError(f"not a model checkpoint (kind={meta.get('kind')!r})")
    try:
        config = ModelConfig.from_dict(meta["config"]).validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    params = {}
    state = {}
    for name, arr in arrays.items():
        if name.startswith(STATE_PREFIX):
            state[name[len(STATE_PREFIX):]] = arr
        else:
            params[name] = arr
    if sorted(params) != expected_param_names(config):
        raise CheckpointError(
            "checkpoint parameters do not match its config: "
            f"have {sorted(params)}, expected {expected_param_names(config)}")
    if sorted(state) != expected_state_names(config):
        raise CheckpointError("checkpoint running statistics do not match its config")
    return params, state, config
