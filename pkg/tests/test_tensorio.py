import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from houghvote.errors import TensorFormatError
from houghvote.tensorio import read_hvt, write_hvt


def test_layout(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_hvt(tmp_path / "t.hvt", a)
    raw = (tmp_path / "t.hvt").read_bytes()
    assert raw[:4] == b"HVT1"
    assert struct.unpack("<III", raw[4:16]) == (2, 2, 3)
    assert struct.unpack("<6f", raw[16:]) == tuple(range(6))


@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_round_trip_bit_exact(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("hvt") / "a.hvt"
    write_hvt(p, a)
    b = read_hvt(p)
    assert b.shape == a.shape
    assert b.tobytes() == a.tobytes()


def test_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"HVT2" + b"\0" * 8)
    with pytest.raises(TensorFormatError, match="magic"):
        read_hvt(tmp_path / "x")


def test_truncated_payload(tmp_path):
    write_hvt(tmp_path / "x", np.zeros((3, 3), np.float32))
    raw = (tmp_path / "x").read_bytes()
    (tmp_path / "x").write_bytes(raw[:-4])
    with pytest.raises(TensorFormatError, match="payload"):
        read_hvt(tmp_path / "x")
