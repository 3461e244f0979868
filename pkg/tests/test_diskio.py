"""Blob container: header parsing, checksum trailer, error taxonomy."""

import numpy as np
import pytest

from ddmlab.diskio import (
    CacheChecksumError,
    CacheFormatError,
    CacheVersionError,
    fnv1a_64,
    read_blob_file,
    write_blob_file,
)


def test_fnv1a_64_published_vectors():
    # Reference values for the 64-bit FNV-1a parameters.
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_roundtrip_preserves_fields_and_blob(tmp_path):
    blob = np.arange(17, dtype=np.float64).tobytes()
    fields = {"n": "17", "note": "x=1,y=2", "seed": "0"}
    path = tmp_path / "a.bin"
    write_blob_file(path, "DDMLAB-DS", fields, blob)
    got_fields, got_blob = read_blob_file(path, "DDMLAB-DS")
    assert got_fields == fields
    assert got_blob == blob


def test_empty_blob_roundtrips(tmp_path):
    path = tmp_path / "e.bin"
    write_blob_file(path, "DDMLAB-CK", {}, b"")
    fields, blob = read_blob_file(path, "DDMLAB-CK")
    assert fields == {}
    assert blob == b""


def test_wrong_magic_is_format_error(tmp_path):
    path = tmp_path / "m.bin"
    write_blob_file(path, "DDMLAB-DS", {"k": "v"}, b"\x00" * 8)
    with pytest.raises(CacheFormatError):
        read_blob_file(path, "DDMLAB-CK")


def test_unknown_version_is_version_error(tmp_path):
    path = tmp_path / "v.bin"
    write_blob_file(path, "DDMLAB-DS", {"k": "v"}, b"\x00" * 8)
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b"version=1", b"version=9", 1))
    with pytest.raises(CacheVersionError):
        read_blob_file(path, "DDMLAB-DS")


def test_flipped_blob_byte_is_checksum_error(tmp_path):
    blob = np.linspace(0.0, 1.0, 32).tobytes()
    path = tmp_path / "c.bin"
    write_blob_file(path, "DDMLAB-DS", {"k": "v"}, blob)
    raw = bytearray(path.read_bytes())
    raw[-20] ^= 0xFF  # inside the blob, ahead of the 8-byte trailer
    path.write_bytes(bytes(raw))
    with pytest.raises(CacheChecksumError):
        read_blob_file(path, "DDMLAB-DS")


def test_truncated_file_is_checksum_error(tmp_path):
    blob = np.zeros(16).tobytes()
    path = tmp_path / "t.bin"
    write_blob_file(path, "DDMLAB-DS", {"k": "v"}, blob)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(CacheChecksumError):
        read_blob_file(path, "DDMLAB-DS")


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        read_blob_file(tmp_path / "nope.bin", "DDMLAB-DS")
