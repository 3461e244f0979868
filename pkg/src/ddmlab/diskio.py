"""Shared on-disk container: text header + float64 blob + FNV-1a checksum.

Both the dataset cache and network checkpoints use this framing. The file is
a short ASCII header (magic line, then key=value lines), a blank line, the
raw little-endian float64 blob, and an 8-byte little-endian FNV-1a hash of
the blob. The checksum covers only the blob; header corruption surfaces as a
format or shape error instead.
"""

from __future__ import annotations

from pathlib import Path

FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class CacheError(Exception):
    """Base class for blob-file read failures."""


class CacheFormatError(CacheError):
    """Malformed header, wrong magic, or a blob whose size contradicts it."""


class CacheVersionError(CacheError):
    """Header declares a version this code does not read."""


class CacheChecksumError(CacheError):
    """Blob bytes do not hash to the stored checksum (includes truncation)."""


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def write_blob_file(path: str | Path, magic: str, fields: dict[str, str], blob: bytes) -> None:
    """Write header fields and blob to path, appending the blob checksum.

    Field order is preserved, so identical inputs produce identical bytes.
    """
    lines = [magic]
    lines.append(f"version={FORMAT_VERSION}")
    for key, value in fields.items():
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"illegal header field {key!r}")
        lines.append(f"{key}={value}")
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    checksum = fnv1a_64(blob).to_bytes(8, "little")
    Path(path).write_bytes(header + blob + checksum)


def read_blob_file(path: str | Path, magic: str) -> tuple[dict[str, str], bytes]:
    """Read a blob file back, verifying magic, version, and checksum."""
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise CacheFormatError(f"{path}: no header terminator")
    try:
        lines = raw[:sep].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise CacheFormatError(f"{path}: header is not ASCII") from exc
    if not lines or lines[0] != magic:
        raise CacheFormatError(f"{path}: expected magic {magic!r}, found {lines[0] if lines else ''!r}")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        key, eq, value = line.partition("=")
        if not eq:
            raise CacheFormatError(f"{path}: malformed header line {line!r}")
        fields[key] = value
    version = fields.pop("version", None)
    if version != str(FORMAT_VERSION):
        raise CacheVersionError(f"{path}: version {version!r}, expected {FORMAT_VERSION}")
    body = raw[sep + 2 :]
    if len(body) < 8:
        raise CacheChecksumError(f"{path}: file truncated before checksum")
    blob, stored = body[:-8], int.from_bytes(body[-8:], "little")
    if fnv1a_64(blob) != stored:
        raise CacheChecksumError(f"{path}: blob checksum mismatch (corrupt or truncated file)")
    return fields, blob
