"""Tensor container I/O, written against the wire format contract.

This is an independent implementation of the weight-exchange format (the
engine has its own): magic "NWFT" | version u32 LE | manifest length
u64 LE | manifest UTF-8 JSON | zero padding to an 8-byte offset | raw
little-endian float32 tensor data. The manifest holds one entry per
tensor {name, dtype, shape, offset, nbytes}, a string metadata map, and
a crc32 computed over manifest + padding + data with the checksum digits
zeroed. Serialization is deterministic, so write(read(blob)) == blob.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"NWFT"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_CRC_TOKEN = b'"crc32":"'
_CRC_PLACEHOLDER = "00000000"


class ContainerFormatError(ValueError):
    """The blob does not parse as a valid tensor container."""


def _align8(n: int) -> int:
    return (n + 7) // 8 * 8


def container_bytes(tensors: dict, metadata: dict) -> bytes:
    """Serialize named float tensors plus string metadata."""
    entries = []
    payload = bytearray()
    for name, array in tensors.items():
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
    for key, value in metadata.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ValueError("metadata must map strings to strings")
    manifest = {
        "tensors": entries,
        "metadata": dict(metadata),
        "crc32": _CRC_PLACEHOLDER,
    }
    text = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    data_start = _align8(_HEADER.size + len(text))
    pad = b"\x00" * (data_start - _HEADER.size - len(text))
    crc = zlib.crc32(text + pad + bytes(payload)) & 0xFFFFFFFF
    pos = text.rfind(_CRC_TOKEN + _CRC_PLACEHOLDER.encode()) + len(_CRC_TOKEN)
    text = text[:pos] + f"{crc:08x}".encode() + text[pos + 8 :]
    return _HEADER.pack(MAGIC, VERSION, len(text)) + text + pad + bytes(payload)


def container_from_bytes(blob: bytes) -> tuple[dict, dict]:
    """Parse and validate; returns (tensors float64, metadata)."""
    if len(blob) < _HEADER.size:
        raise ContainerFormatError("blob shorter than the fixed header")
    magic, version, manifest_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported version {version}")
    manifest_end = _HEADER.size + manifest_len
    if manifest_end > len(blob):
        raise ContainerFormatError("declared manifest extends past end of blob")
    raw_manifest = blob[_HEADER.size : manifest_end]
    try:
        manifest = json.loads(raw_manifest.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"manifest is not UTF-8 JSON: {exc}") from None
    if not isinstance(manifest, dict) or set(manifest) != {
        "tensors",
        "metadata",
        "crc32",
    }:
        raise ContainerFormatError("manifest must have tensors, metadata, crc32")
    metadata = manifest["metadata"]
    stated = manifest["crc32"]
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ContainerFormatError("metadata must map strings to strings")
    if not isinstance(stated, str) or len(stated) != 8:
        raise ContainerFormatError("crc32 must be 8 hex digits")

    data_start = _align8(manifest_end)
    if data_start > len(blob) or any(b != 0 for b in blob[manifest_end:data_start]):
        raise ContainerFormatError("bad padding between manifest and data")
    data = blob[data_start:]

    pos = raw_manifest.rfind(_CRC_TOKEN) + len(_CRC_TOKEN)
    patched = (
        raw_manifest[:pos] + _CRC_PLACEHOLDER.encode() + raw_manifest[pos + 8 :]
    )
    actual = zlib.crc32(patched + blob[manifest_end:]) & 0xFFFFFFFF
    if f"{actual:08x}" != stated:
        raise ContainerFormatError(
            f"checksum mismatch: stated {stated}, computed {actual:08x}"
        )

    tensors = {}
    if not isinstance(manifest["tensors"], list):
        raise ContainerFormatError("tensors must be a list")
    for entry in manifest["tensors"]:
        if not isinstance(entry, dict):
            raise ContainerFormatError("tensor entries must be objects")
        try:
            name = entry["name"]
            shape = entry["shape"]
            offset = entry["offset"]
            nbytes = entry["nbytes"]
            dtype = entry["dtype"]
        except KeyError as exc:
            raise ContainerFormatError(f"tensor entry missing {exc}") from None
        if dtype != "f32":
            raise ContainerFormatError(f"unsupported dtype {dtype!r}")
        if not isinstance(name, str) or name in tensors:
            raise ContainerFormatError(f"bad or duplicate tensor name {name!r}")
        count = int(np.prod(shape))
        if nbytes != 4 * count or offset % 8 != 0 or offset + nbytes > len(data):
            raise ContainerFormatError(f"bad layout for tensor {name!r}")
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f4")
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return tensors, dict(metadata)


def save_container(path, tensors: dict, metadata: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(container_bytes(tensors, metadata))


def load_container(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        return container_from_bytes(fh.read())
