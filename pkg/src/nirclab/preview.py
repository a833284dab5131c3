"""Tone-mapped PNG previews. Never feeds back into any metric."""

from __future__ import annotations

import struct
import zlib

import numpy as np


def tonemap(img, exposure=1.0, gamma=2.2):
    """Linear HDR to display bytes: exposure scale, gamma, 8-bit clamp."""
    x = np.maximum(np.asarray(img, float) * exposure, 0.0)
    x = np.clip(x ** (1.0 / gamma), 0.0, 1.0)
    return (x * 255.0 + 0.5).astype(np.uint8)


def write_png(path, rgb8):
    """Minimal 8-bit RGB PNG writer (filter 0 rows, one IDAT)."""
    a = np.asarray(rgb8)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ValueError("write_png wants an (h, w, 3) uint8 array")
    h, w = a.shape[:2]
    raw = b"".join(b"\x00" + a[y].tobytes() for y in range(h))

    def chunk(tag, body):
        return (struct.pack(">I", len(body)) + tag + body
                + struct.pack(">I", zlib.crc32(tag + body)))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    data = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raw, 6)) + chunk(b"IEND", b""))
    with open(path, "wb") as f:
        f.write(data)


def save_preview(path, img, exposure=1.0, gamma=2.2):
    write_png(path, tonemap(img, exposure, gamma))
