"""PFM container: layout, roundtrips, malformed input."""

import io

import numpy as np
import pytest

from nirclab.pfm import read_pfm, write_pfm


def test_single_pixel_layout():
    img = np.array([[[1.0, 2.0, 3.0]]], dtype=np.float32)
    buf = io.BytesIO()
    write_pfm(buf, img)
    raw = buf.getvalue()
    assert raw.startswith(b"PF\n1 1\n-1.0\n")
    header_len = len(b"PF\n1 1\n-1.0\n")
    assert len(raw) - header_len == 12
    back = read_pfm(raw)
    np.testing.assert_array_equal(back, img)


def test_roundtrip_bit_exact(tmp_path):
    r = np.random.default_rng(0)
    img = (r.standard_normal((64, 64, 3)) * 100).astype(np.float32)
    p = tmp_path / "x.pfm"
    write_pfm(p, img)
    back = read_pfm(p)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, img)


def test_row_order_bottom_to_top():
    img = np.zeros((2, 1, 3), dtype=np.float32)
    img[0] = 7.0  # top row
    img[1] = 9.0  # bottom row
    buf = io.BytesIO()
    write_pfm(buf, img)
    raw = buf.getvalue()
    payload = np.frombuffer(raw[len(b"PF\n1 2\n-1.0\n") :], dtype="<f4")
    assert payload[0] == 9.0  # bottom row first in the file
    assert payload[3] == 7.0


def test_big_endian_rejected():
    data = b"PF\n1 1\n1.0\n" + b"\x00" * 12
    with pytest.raises(ValueError, match="big-endian"):
        read_pfm(data)


def test_truncated_payload_names_counts():
    data = b"PF\n2 2\n-1.0\n" + b"\x00" * 10
    with pytest.raises(ValueError, match="expected 48 bytes, got 10"):
        read_pfm(data)


def test_grayscale_rejected():
    with pytest.raises(ValueError, match="grayscale"):
        read_pfm(b"Pf\n1 1\n-1.0\n" + b"\x00" * 4)


def test_non_finite_rejected():
    img = np.full((1, 1, 3), np.nan, dtype=np.float32)
    with pytest.raises(ValueError, match="finite"):
        write_pfm(io.BytesIO(), img)
