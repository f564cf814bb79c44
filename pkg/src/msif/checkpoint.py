"""Binary weight checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"MSIFCKPT"
    uint32    format version (FORMAT_VERSION)
    uint32    metadata length M
    M bytes   UTF-8 JSON metadata (config, epoch, loss history, ...)
    uint32    entry count K
    K times:
        uint16  name length L, then L bytes UTF-8 path-name
        uint8   ndim D, then D x uint32 extents
        prod(extents) x float64 payload, row-major
"""
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"MSIFCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def save_checkpoint(path, arrays, metadata=None):
    """Write ``arrays`` (name -> ndarray or Tensor) and JSON ``metadata``."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(getattr(arr, "data", arr), dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(arrays, metadata)``; arrays is an ordered name -> ndarray map."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, mlen = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        metadata = json.loads(take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata") from exc
    (count,) = struct.unpack("<I", take(4))
    arrays = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, metadata
