import struct

import numpy as np
import pytest

from anchor_export.vea import VeaError, encode_anchor_file, write_anchor_file


def test_exact_byte_layout():
    vectors = {
        "a": np.array([[1.0, 2.0]], dtype=np.float32),
        "bc": np.array([[3.0, 4.0], [5.0, 6.0]], dtype=np.float32),
    }
    blob = encode_anchor_file(["a", "bc"], vectors)
    expected = b"VEA1" + struct.pack("<II", 2, 2)
    expected += struct.pack("<H", 1) + b"a" + struct.pack("<I", 1)
    expected += np.array([1.0, 2.0], dtype="<f4").tobytes()
    expected += struct.pack("<H", 2) + b"bc" + struct.pack("<I", 2)
    expected += np.array([3.0, 4.0, 5.0, 6.0], dtype="<f4").tobytes()
    assert blob == expected


def test_utf8_names_roundtrip_bytes():
    blob = encode_anchor_file(["früh"], {"früh": np.ones((1, 3), dtype=np.float32)})
    name = "früh".encode("utf-8")
    assert struct.pack("<H", len(name)) + name in blob


@pytest.mark.parametrize(
    "classes,vectors,message",
    [
        (["x", "x"], {"x": np.ones((1, 2))}, "duplicate"),
        (["x"], {"x": np.ones((0, 2))}, "at least one"),
        (["x"], {"x": np.full((1, 2), np.nan)}, "non-finite"),
        (["x"], {"x": np.zeros((1, 2))}, "all-zero"),
        (["x", "y"], {"x": np.ones((1, 2)), "y": np.ones((1, 3))}, "width differs"),
    ],
)
def test_rejects_invalid_inputs(classes, vectors, message):
    with pytest.raises(VeaError, match=message):
        encode_anchor_file(classes, vectors)


def test_atomic_write_preserves_existing_file_on_failure(tmp_path):
    target = tmp_path / "anchors.vea"
    write_anchor_file(target, ["ok"], {"ok": np.ones((1, 2), dtype=np.float32)})
    before = target.read_bytes()
    with pytest.raises(VeaError):
        write_anchor_file(target, ["bad"], {"bad": np.full((1, 2), np.inf)})
    assert target.read_bytes() == before
    assert list(tmp_path.glob("*.tmp")) == []
