"""Weight container wire format.

Byte layout (all integers little endian):

    magic "NWFT" (4) | version u32 | manifest length u64 |
    manifest UTF-8 JSON | zero padding to an 8-byte file offset |
    raw float32 tensor data

The manifest holds, in fixed field order, one entry per tensor
{name, dtype, shape, offset, nbytes} with offsets relative to the data
section, 8-byte aligned and non-overlapping, plus a string-to-string
metadata map and a crc32 over the rest of the file (computed with the
checksum digits replaced by zeros, so any byte change in manifest,
padding, or data is detected). Tensors are float32 on disk and float64
in memory.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NWFT"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_CRC_PLACEHOLDER = "00000000"
_CRC_TOKEN = b'"crc32":"'


class ContainerError(ValueError):
    """Base class: the file is not a valid tensor container."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ManifestError(ContainerError):
    pass


class DuplicateNameError(ManifestError):
    pass


class AlignmentError(ContainerError):
    pass


class OverlapError(ContainerError):
    pass


class SizeMismatchError(ContainerError):
    pass


class BoundsError(ContainerError):
    pass


class PaddingError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


@dataclass
class TensorContainer:
    """Named float tensors plus a small string metadata map."""

    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)


def _align8(n: int) -> int:
    return (n + 7) // 8 * 8


def to_bytes(container: TensorContainer) -> bytes:
    """Serialize deterministically (same container -> same bytes)."""
    entries = []
    payload = bytearray()
    for name, array in container.tensors.items():
        if not isinstance(name, str) or not name:
            raise ValueError("tensor names must be non-empty strings")
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim < 1:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} has non-finite values")
        raw = arr.astype("<f4").tobytes()
        offset = _align8(len(payload))
        payload.extend(b"\x00" * (offset - len(payload)))
        payload.extend(raw)
        entries.append(
            {
                "name": name,
                "dtype": "f32",
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
    for key, value in container.metadata.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ValueError("metadata must map strings to strings")

    manifest = {
        "tensors": entries,
        "metadata": dict(container.metadata),
        "crc32": _CRC_PLACEHOLDER,
    }
    text = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    data_start = _align8(_HEADER.size + len(text))
    pad = b"\x00" * (data_start - _HEADER.size - len(text))
    crc = zlib.crc32(text + pad + bytes(payload)) & 0xFFFFFFFF
    pos = text.rfind(_CRC_TOKEN + _CRC_PLACEHOLDER.encode())
    assert pos >= 0
    pos += len(_CRC_TOKEN)
    text = text[:pos] + f"{crc:08x}".encode() + text[pos + 8 :]
    header = _HEADER.pack(MAGIC, VERSION, len(text))
    return header + text + pad + bytes(payload)


def from_bytes(blob: bytes) -> TensorContainer:
    """Parse and fully validate a container."""
    if len(blob) < _HEADER.size:
        raise TruncatedFileError("file shorter than the fixed header")
    magic, version, manifest_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    manifest_end = _HEADER.size + manifest_len
    if manifest_end > len(blob):
        raise TruncatedFileError("declared manifest extends past end of file")
    raw_manifest = blob[_HEADER.size : manifest_end]
    try:
        manifest = json.loads(raw_manifest.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"manifest is not valid UTF-8 JSON: {exc}") from None
    if not isinstance(manifest, dict) or set(manifest) != {
        "tensors",
        "metadata",
        "crc32",
    }:
        raise ManifestError("manifest must have tensors, metadata, crc32")
    entries = manifest["tensors"]
    metadata = manifest["metadata"]
    stated_crc = manifest["crc32"]
    if not isinstance(entries, list):
        raise ManifestError("tensors must be a list")
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ManifestError("metadata must map strings to strings")
    if (
        not isinstance(stated_crc, str)
        or len(stated_crc) != 8
        or any(c not in "0123456789abcdef" for c in stated_crc)
    ):
        raise ManifestError("crc32 must be 8 lowercase hex digits")

    data_start = _align8(manifest_end)
    if data_start > len(blob):
        raise TruncatedFileError("file ends inside the alignment padding")
    if any(b != 0 for b in blob[manifest_end:data_start]):
        raise PaddingError("non-zero padding between manifest and data")
    data = blob[data_start:]

    seen: dict[str, tuple[int, int]] = {}
    spans = []
    for entry in entries:
        if not isinstance(entry, dict) or list(entry) != [
            "name",
            "dtype",
            "shape",
            "offset",
            "nbytes",
        ]:
            raise ManifestError("tensor entry fields must be name, dtype, shape, offset, nbytes")
        name = entry["name"]
        if not isinstance(name, str) or not name:
            raise ManifestError("tensor name must be a non-empty string")
        if name in seen:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        if entry["dtype"] != "f32":
            raise ManifestError(f"unsupported dtype {entry['dtype']!r}")
        shape = entry["shape"]
        if (
            not isinstance(shape, list)
            or not shape
            or not all(isinstance(d, int) and d >= 1 for d in shape)
        ):
            raise ManifestError(f"bad shape for {name!r}")
        offset, nbytes = entry["offset"], entry["nbytes"]
        if not isinstance(offset, int) or not isinstance(nbytes, int) or offset < 0:
            raise ManifestError(f"bad offset/nbytes for {name!r}")
        if offset % 8 != 0:
            raise AlignmentError(f"tensor {name!r} offset {offset} not 8-byte aligned")
        count = 1
        for d in shape:
            count *= d
        if nbytes != 4 * count:
            raise SizeMismatchError(
                f"tensor {name!r}: {nbytes} bytes for {count} f32 elements"
            )
        if offset + nbytes > len(data):
            raise BoundsError(f"tensor {name!r} extends past end of data section")
        seen[name] = (offset, nbytes)
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise OverlapError(f"tensors {name_a!r} and {name_b!r} overlap")

    pos = raw_manifest.rfind(_CRC_TOKEN)
    patched = (
        raw_manifest[: pos + len(_CRC_TOKEN)]
        + _CRC_PLACEHOLDER.encode()
        + raw_manifest[pos + len(_CRC_TOKEN) + 8 :]
    )
    actual = zlib.crc32(patched + blob[manifest_end:]) & 0xFFFFFFFF
    if f"{actual:08x}" != stated_crc:
        raise ChecksumError(
            f"checksum mismatch: stated {stated_crc}, computed {actual:08x}"
        )

    tensors = {}
    for entry in entries:
        offset, nbytes = seen[entry["name"]]
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f4")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return TensorContainer(tensors=tensors, metadata=dict(metadata))


def save(container: TensorContainer, path) -> None:
    blob = to_bytes(container)
    with open(path, "wb") as fh:
        fh.write(blob)


def load(path) -> TensorContainer:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
