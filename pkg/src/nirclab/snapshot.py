"""Binary snapshot container for network parameters and optimizer state.

Layout, all little-endian:
  magic   8 bytes  b"NNCACHE1"
  count   u16      number of entries
  entry:
    name_len u16, name utf-8
    dtype    u8   (0 f32, 1 f64, 2 i64, 3 u64, 4 i32)
    ndim     u8
    shape    u32 * ndim
    nbytes   u64
    data     raw array bytes

Scalars round-trip as 0-d arrays.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"NNCACHE1"

_DTYPES = [np.dtype("<f4"), np.dtype("<f8"), np.dtype("<i8"),
           np.dtype("<u8"), np.dtype("<i4")]


def save_snapshot(path, arrays):
    """Write a name -> array mapping (values may be scalars)."""
    blob = [MAGIC, struct.pack("<H", len(arrays))]
    for name, value in arrays.items():
        arr = np.asarray(value)
        codes = [i for i, d in enumerate(_DTYPES) if d == arr.dtype.newbyteorder("<")]
        if not codes:
            arr = arr.astype("<f8")
            codes = [1]
        arr = arr.astype(_DTYPES[codes[0]], copy=False)
        nb = name.encode()
        blob.append(struct.pack("<H", len(nb)))
        blob.append(nb)
        blob.append(struct.pack("<BB", codes[0], arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blob.append(struct.pack("<Q", arr.nbytes))
        blob.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_snapshot(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ConfigError(f"not a cache snapshot: {path}")
    pos = 8
    (count,) = struct.unpack_from("<H", data, pos)
    pos += 2
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + nbytes > len(data):
            raise ConfigError(f"truncated snapshot entry '{name}'")
        arr = np.frombuffer(data[pos : pos + nbytes], _DTYPES[code]).reshape(shape)
        pos += nbytes
        out[name] = arr.copy()
    return out
