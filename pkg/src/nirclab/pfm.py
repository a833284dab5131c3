"""PFM image I/O.

Color maps only: header ``PF\\n<w> <h>\\n-1.0\\n`` followed by
little-endian float32 RGB scanlines stored bottom to top. A
non-negative scale (big-endian data) is rejected rather than converted.
Roundtrips are bit exact.
"""

from __future__ import annotations

import io
import os

import numpy as np


def write_pfm(path_or_file, image):
    """Write an (h, w, 3) float array; values are stored as float32."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("pfm image must be finite")
    h, w = img.shape[:2]
    data = np.ascontiguousarray(img[::-1].astype("<f4"))
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    if hasattr(path_or_file, "write"):
        path_or_file.write(header)
        path_or_file.write(data.tobytes())
    else:
        with open(path_or_file, "wb") as f:
            f.write(header)
            f.write(data.tobytes())


def read_pfm(source):
    """Read a color PFM into an (h, w, 3) float32 array."""
    if isinstance(source, (bytes, bytearray)):
        f = io.BytesIO(source)
    elif hasattr(source, "read"):
        f = source
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return read_pfm(fh.read())
    else:
        raise TypeError("read_pfm takes bytes, a file object, or a path")

    def token():
        # whitespace-separated header token
        chars = []
        while True:
            c = f.read(1)
            if not c:
                raise ValueError("truncated pfm header")
            if c.isspace():
                if chars:
                    return b"".join(chars)
                continue
            chars.append(c)

    magic = token()
    if magic == b"Pf":
        raise ValueError("grayscale pfm (Pf) is not supported, expected PF")
    if magic != b"PF":
        raise ValueError(f"not a pfm file (magic {magic!r})")
    w = int(token())
    h = int(token())
    scale = float(token())
    if scale >= 0.0:
        raise ValueError(
            f"big-endian pfm (scale {scale}) is not supported; expected a negative scale"
        )
    need = w * h * 3 * 4
    raw = f.read(need)
    if len(raw) != need:
        raise ValueError(f"truncated pfm payload: expected {need} bytes, got {len(raw)}")
    img = np.frombuffer(raw, dtype="<f4").reshape(h, w, 3)
    return img[::-1].copy()
