import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from zerosight.serialization import (FormatError, dumps_checkpoint, load_checkpoint, load_ten, loads_checkpoint,
                                     save_checkpoint, save_ten)


def test_ten_layout_by_hand(tmp_path):
    path = tmp_path / "a.ten"
    save_ten(path, np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    raw = path.read_bytes()
    expected = b"ZSTEN1" + bytes([0, 2]) + struct.pack("<II", 1, 3) + struct.pack("<3f", 1.0, 2.0, 3.0)
    assert raw == expected


def test_ten_float64_code(tmp_path):
    save_ten(tmp_path / "b.ten", np.zeros(2))
    assert (tmp_path / "b.ten").read_bytes()[6] == 1


def test_ten_scalar(tmp_path):
    save_ten(tmp_path / "s.ten", np.float64(2.5))
    assert load_ten(tmp_path / "s.ten").shape == ()


@settings(max_examples=40, deadline=None)
@given(arrays(st.sampled_from([np.float32, np.float64]), array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_ten_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("ten") / "x.ten"
    save_ten(path, a)
    back = load_ten(path)
    assert back.dtype == a.dtype and back.shape == a.shape
    assert back.tobytes() == a.tobytes()


def test_ten_rejects_bad_magic(tmp_path):
    (tmp_path / "bad.ten").write_bytes(b"NOTTEN" + b"\0" * 10)
    with pytest.raises(FormatError):
        load_ten(tmp_path / "bad.ten")


def test_ten_rejects_truncation_and_trailing(tmp_path):
    save_ten(tmp_path / "t.ten", np.ones(4))
    raw = (tmp_path / "t.ten").read_bytes()
    (tmp_path / "short.ten").write_bytes(raw[:-1])
    (tmp_path / "long.ten").write_bytes(raw + b"\0")
    for name in ("short.ten", "long.ten"):
        with pytest.raises(FormatError):
            load_ten(tmp_path / name)


def test_ten_rejects_integer_dtype(tmp_path):
    with pytest.raises(FormatError):
        save_ten(tmp_path / "i.ten", np.arange(3))


def test_checkpoint_layout_and_round_trip(tmp_path):
    entries = {"stem_conv.weight": np.ones((2, 3), dtype=np.float32), "proxy.bank": np.zeros(4)}
    raw = dumps_checkpoint(entries)
    assert raw[:7] == b"ZSCKPT1" and struct.unpack("<I", raw[7:11]) == (2,)
    assert struct.unpack("<H", raw[11:13]) == (len("stem_conv.weight"),)
    save_checkpoint(tmp_path / "c.ckpt", entries)
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].tobytes() == entries[k].tobytes() and back[k].dtype == entries[k].dtype
    assert not (tmp_path / "c.ckpt.tmp").exists()


def test_checkpoint_rejects_corruption():
    raw = dumps_checkpoint({"a": np.ones(2)})
    with pytest.raises(FormatError):
        loads_checkpoint(raw[:-3])
    with pytest.raises(FormatError):
        loads_checkpoint(raw + b"x")
    with pytest.raises(FormatError):
        loads_checkpoint(b"XXCKPT1" + raw[7:])
