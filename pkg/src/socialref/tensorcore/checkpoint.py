"""Binary checkpoint format.

Layout (little-endian)::

    b"RFO1"
    u16 len + config hash (ascii hex)
    u32 len + metadata (utf-8 JSON)
    u32 record count
    per record: u16 len + name, u8 ndim, u32 * ndim dims, float32 values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from socialref.errors import CheckpointIncompatibleError, DataError

MAGIC = b"RFO1"


def save_checkpoint(path, values, config_hash, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    h = config_hash.encode("ascii")
    chunks = [MAGIC, struct.pack("<H", len(h)), h, struct.pack("<I", len(meta)), meta,
              struct.pack("<I", len(values))]
    for name in sorted(values):
        arr = np.ascontiguousarray(values[name], dtype="<f4")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(values, config_hash, metadata)``; values are float32 arrays."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != MAGIC:
        raise CheckpointIncompatibleError(f"{path}: bad magic {buf[:4]!r}")
    try:
        off = 4
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        config_hash = buf[off:off + n].decode("ascii")
        off += n
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        metadata = json.loads(buf[off:off + n].decode())
        off += n
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        values = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode()
            off += n
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            values[name] = arr.astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt checkpoint {path}: {exc}") from exc
    return values, config_hash, metadata
