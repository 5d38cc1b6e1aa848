"""Tour of the FTS1 feature-tensor file format.

Writes a tensor shaped like one of the pretrained-backbone activations,
inspects the raw bytes, round-trips it, and shows the dedicated error classes
for malformed files.
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from relfuse import read_tensor, write_tensor
from relfuse.data_io import BadMagicError, TruncatedFileError
from relfuse.rng import Rng
from relfuse.tensor_ops import reshape

workdir = Path(tempfile.mkdtemp(prefix="fts_tour_"))
path = workdir / "activation.fts"

# one sample of the deeper backbone tap: 14 x 14 spatial map, 256 channels
tensor = Rng(0).normal(size=(14, 14, 256), dtype=np.float32)
write_tensor(path, tensor)
print(f"wrote {path} ({path.stat().st_size} bytes)")
print("  = 4 magic + 1 rank + 3 reserved + 3*4 dims + 14*14*256*4 payload")

raw = path.read_bytes()
print(f"magic={raw[:4]!r} rank={raw[4]} dims={struct.unpack('<3I', raw[8:20])}")

back = read_tensor(path)
print(f"round-trip exact: {np.array_equal(back, tensor)}")

# the classifier consumes the (W, H, D) map as (W*H, D) rows; row-major order
# places spatial position (w, h) at row w*H + h
rows = reshape(back, (196, 256))
print(f"reshaped to {rows.shape}; row 17 == position (1, 3): "
      f"{np.array_equal(rows[1 * 14 + 3], back[1, 3])}")

bad = workdir / "bad.fts"
bad.write_bytes(b"XXXX" + raw[4:])
try:
    read_tensor(bad)
except BadMagicError as exc:
    print(f"bad magic detected: {exc}")

short = workdir / "short.fts"
short.write_bytes(raw[: len(raw) // 2])
try:
    read_tensor(short)
except TruncatedFileError as exc:
    print(f"truncation detected: {exc}")
