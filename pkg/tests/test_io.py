import struct

import numpy as np
import pytest

from dualoct import io
from dualoct.tensor import ComplexTensor


def test_doct_layout_by_hand():
    t = ComplexTensor(np.array([[1.0, 2.0, 3.0]]), np.array([[-1.0, 0.5, 0.0]]))
    buf = io.encode_doct(t)
    expected = (b"DOCT" + struct.pack("<III", 1, 0, 2) + struct.pack("<QQ", 1, 3)
                + struct.pack("<3d", 1.0, 2.0, 3.0) + struct.pack("<3d", -1.0, 0.5, 0.0))
    assert buf == expected


def test_doct_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((2, 3, 4, 5))
    vals.flat[0] = -0.0
    vals.flat[1] = np.inf
    vals.flat[2] = 5e-324
    t = ComplexTensor(vals, rng.standard_normal((2, 3, 4, 5)))
    io.write_doct(tmp_path / "t.doct", t)
    back = io.read_doct(tmp_path / "t.doct")
    assert back.shape == t.shape
    assert back.real.tobytes() == t.real.tobytes() and back.imag.tobytes() == t.imag.tobytes()


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b"DOCX" + b[4:], 0),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], 4),
    (lambda b: b[:8] + struct.pack("<I", 1) + b[12:], 8),
    (lambda b: b[:12] + struct.pack("<I", 0) + b[16:], 12),
    (lambda b: b[:16] + struct.pack("<Q", 0) + b[24:], 16),
    (lambda b: b[:10], 10),
    (lambda b: b[:20], 20),
    (lambda b: b[:-8], 24 + 16 * 3 - 8),
    (lambda b: b + b"\0", 24 + 16 * 3),
])
def test_doct_malformed_reports_offset(mutate, offset):
    good = io.encode_doct(ComplexTensor(np.arange(3.0)))
    with pytest.raises(io.DOCTFormatError) as exc:
        io.decode_doct(mutate(good))
    assert exc.value.offset == offset
    assert f"offset {offset}" in str(exc.value)


def test_pgm_export(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 2.0]])
    io.write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    back = io.read_pgm(tmp_path / "a.pgm")
    np.testing.assert_array_equal(back, [[0, 16384], [32768, 65535]])
    with pytest.raises(ValueError):
        io.write_pgm(tmp_path / "b.pgm", np.zeros((2, 2, 2)))


def test_keyvalue(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\na = 1\n\nb=two # trailing\n")
    assert io.read_keyvalue(p) == {"a": "1", "b": "two"}
    p.write_text("a=1\na=2\n")
    with pytest.raises(ValueError):
        io.read_keyvalue(p)
    p.write_text("novalue\n")
    with pytest.raises(ValueError):
        io.read_keyvalue(p)
    io.write_keyvalue(p, [("x", 1), ("y", "z")])
    assert io.read_keyvalue(p) == {"x": "1", "y": "z"}
