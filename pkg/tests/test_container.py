"""Binary section-container round-trips and corruption handling."""

import numpy as np
import pytest

from artimode import container as C


def test_roundtrip(tmp_path):
    path = tmp_path / "a.bin"
    sections = {
        "enc.w": np.arange(12, dtype=np.float32).reshape(3, 4),
        "enc.b": np.zeros(4, dtype=np.float32),
        "meta": C.text_to_array("hello world"),
    }
    C.write_container(path, sections)
    back = C.read_container(path)
    assert list(back) == list(sections)
    for k in sections:
        assert back[k].dtype == np.float32
        assert np.array_equal(back[k], sections[k])
    assert C.array_to_text(back["meta"]) == "hello world"


def test_scalar_and_empty_sections(tmp_path):
    path = tmp_path / "b.bin"
    C.write_container(path, {"s": np.float32(3.5), "e": np.zeros((0,), dtype=np.float32)})
    back = C.read_container(path)
    assert back["s"].shape == ()
    assert float(back["s"]) == 3.5
    assert back["e"].shape == (0,)


def test_bad_magic(tmp_path):
    path = tmp_path / "c.bin"
    C.write_container(path, {"x": np.ones(3, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(C.ContainerError, match="magic"):
        C.read_container(path)


def test_bad_version(tmp_path):
    path = tmp_path / "d.bin"
    C.write_container(path, {"x": np.ones(3, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(C.ContainerError, match="version"):
        C.read_container(path)


def test_truncation(tmp_path):
    path = tmp_path / "e.bin"
    C.write_container(path, {"x": np.ones(100, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-17])
    with pytest.raises(C.ContainerError):
        C.read_container(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "f.bin"
    C.write_container(path, {"x": np.ones(3, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"XX")
    with pytest.raises(C.ContainerError):
        C.read_container(path)


def test_json_codec():
    payload = {"b": [1, 2, 3], "a": {"nested": True}}
    arr = C.json_to_array(payload)
    assert arr.dtype == np.float32
    assert C.array_to_json(arr) == payload


def test_unicode_text():
    s = "café ☃"
    assert C.array_to_text(C.text_to_array(s)) == s
