import json
import struct

import numpy as np
import pytest

from toastvit.archive import ArchiveError, MAGIC, read_archive, read_manifest, write_archive


def _sample_tensors(seed=0):
    rng = np.random.default_rng(seed)
    return [
        ("alpha", rng.normal(size=(3, 4)).astype(np.float32)),
        ("beta", rng.normal(size=7).astype(np.float32)),
        ("gamma", rng.normal(size=(2, 2)).astype(np.float32)),
    ]


def test_round_trip_bit_exact(tmp_path):
    path = tmp_path / "t.toast"
    tensors = _sample_tensors()
    write_archive(path, tensors)
    back = read_archive(path)
    assert [name for name, _ in back] == [name for name, _ in tensors]
    for (_, orig), (_, loaded) in zip(tensors, back):
        assert orig.shape == loaded.shape
        assert orig.tobytes() == loaded.tobytes()


def test_file_length_arithmetic(tmp_path):
    path = tmp_path / "t.toast"
    write_archive(path, [("only", np.ones((2, 2), dtype=np.float32))])
    data = path.read_bytes()
    (manifest_len,) = struct.unpack("<I", data[6:10])
    assert len(data) == 6 + 4 + manifest_len + 16


def test_empty_tensor_list(tmp_path):
    path = tmp_path / "empty.toast"
    write_archive(path, [])
    assert read_archive(path) == []
    assert read_manifest(path)["entries"] == []


def test_rewrite_is_byte_identical(tmp_path):
    path = tmp_path / "t.toast"
    write_archive(path, _sample_tensors())
    first = path.read_bytes()
    write_archive(path, _sample_tensors())
    assert path.read_bytes() == first


def test_duplicate_name_rejected(tmp_path):
    t = np.ones(2, dtype=np.float32)
    with pytest.raises(ArchiveError, match="duplicate"):
        write_archive(tmp_path / "d.toast", [("x", t), ("x", t)])


def test_non_finite_rejected(tmp_path):
    bad = np.array([1.0, np.inf], dtype=np.float32)
    with pytest.raises(ValueError):
        write_archive(tmp_path / "n.toast", [("x", bad)])


def test_wrong_magic(tmp_path):
    path = tmp_path / "x.toast"
    path.write_bytes(b"XXXXXX" + b"\x00" * 32)
    with pytest.raises(ArchiveError, match="not a TOAST archive"):
        read_archive(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.toast"
    write_archive(path, _sample_tensors())
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ArchiveError, match="truncated"):
        read_archive(path)


def test_corrupt_manifest_json(tmp_path):
    manifest = b"{not json"
    blob = MAGIC + struct.pack("<I", len(manifest)) + manifest
    path = tmp_path / "bad.toast"
    path.write_bytes(blob)
    with pytest.raises(ArchiveError, match="bad manifest"):
        read_archive(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.toast"
    write_archive(path, _sample_tensors())
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(ArchiveError):
        read_archive(path)


def test_every_header_byte_corruption_detected(tmp_path):
    # Any single-byte change to the magic or the manifest length must fail.
    path = tmp_path / "t.toast"
    write_archive(path, _sample_tensors())
    pristine = path.read_bytes()
    for pos in range(10):
        for flip in (0x01, 0x80, 0xFF):
            corrupted = bytearray(pristine)
            corrupted[pos] ^= flip
            path.write_bytes(bytes(corrupted))
            with pytest.raises(ArchiveError):
                read_archive(path)


def test_metadata_preserved(tmp_path):
    path = tmp_path / "m.toast"
    write_archive(path, _sample_tensors(), metadata={"casts": {"alpha": "f64->f32"}})
    manifest = read_manifest(path)
    assert manifest["metadata"] == {"casts": {"alpha": "f64->f32"}}
    assert len(read_archive(path)) == 3


def test_offsets_must_be_contiguous(tmp_path):
    entries = [
        {"name": "a", "dims": [1], "byte_offset": 0},
        {"name": "b", "dims": [1], "byte_offset": 8},
    ]
    manifest = json.dumps({"format_version": 1, "entries": entries}).encode()
    blob = MAGIC + struct.pack("<I", len(manifest)) + manifest + b"\x00" * 12
    path = tmp_path / "gap.toast"
    path.write_bytes(blob)
    with pytest.raises(ArchiveError, match="non-contiguous"):
        read_archive(path)
