import numpy as np
import pytest

from hvpl import matio
from hvpl.errors import FormatError


@pytest.mark.parametrize("shape", [(), (3,), (2, 3), (2, 0, 4), (1, 2, 3, 4)])
def test_roundtrip_f8_is_bit_exact(tmp_path, rng, shape):
    a = rng.normal(size=shape)
    path = tmp_path / "a.hvpl"
    matio.save(path, a)
    b = matio.load(path)
    assert b.shape == a.shape and b.dtype == np.float64
    assert a.tobytes() == b.tobytes()


def test_f4_roundtrip(tmp_path, rng):
    a = rng.normal(size=(4, 5))
    matio.save(tmp_path / "a.hvpl", a, dtype="f4")
    b = matio.load(tmp_path / "a.hvpl")
    assert b.dtype == np.float32 and np.array_equal(b, a.astype(np.float32))


def test_header_layout():
    buf = matio.encode(np.zeros((2, 3)))
    assert buf[:8] == b"HVPLMAT1"
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:16], "little") == 2
    assert int.from_bytes(buf[16:24], "little") == 2
    assert int.from_bytes(buf[24:32], "little") == 3
    assert len(buf) == 32 + 6 * 8


def test_multi_record_file(tmp_path, rng):
    arrays = [rng.normal(size=(2, 2)), rng.normal(size=(5,)), rng.normal(size=(1, 3))]
    matio.save(tmp_path / "m.hvpl", *arrays)
    back = matio.read_all(tmp_path / "m.hvpl")
    assert all(np.array_equal(a, b) for a, b in zip(arrays, back))
    assert [h["dims"] for h in matio.headers(tmp_path / "m.hvpl")] == [[2, 2], [5], [1, 3]]


def test_bad_magic_names_the_file(tmp_path):
    p = tmp_path / "bad.hvpl"
    p.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(FormatError, match="bad.hvpl"):
        matio.load(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.hvpl"
    p.write_bytes(matio.encode(np.ones((4, 4)))[:-5])
    with pytest.raises(FormatError, match="truncated"):
        matio.load(p)


def test_unknown_dtype_code(tmp_path):
    buf = bytearray(matio.encode(np.ones(2)))
    buf[8:12] = (7).to_bytes(4, "little")
    p = tmp_path / "d.hvpl"
    p.write_bytes(bytes(buf))
    with pytest.raises(FormatError, match="dtype"):
        matio.load(p)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        matio.load(tmp_path / "nope.hvpl")
