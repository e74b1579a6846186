"""Single-file binary container shared by datasets, checkpoints and stats.

Layout: magic b"SSTB1", little-endian uint32 header length, UTF-8 JSON
header, then a raw little-endian float64 payload. The header always carries
"payload_len" (number of f64 values) so truncation is detectable.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSTB1"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Malformed or incompatible container file."""


def write_container(path, header: dict, payload: np.ndarray):
    """Serialize header+payload; header keys are augmented with format metadata."""
    payload = np.ascontiguousarray(payload, dtype="<f8").ravel()
    full = dict(header)
    full["format_version"] = FORMAT_VERSION
    full["dtype"] = "f64"
    full["endianness"] = "little"
    full["payload_len"] = int(payload.size)
    raw = json.dumps(full, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(payload.tobytes())


def read_container(path) -> tuple[dict, np.ndarray]:
    """Read and validate a container; returns (header, flat f64 payload)."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: bad magic bytes (not an SSTB1 container)")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise ContainerError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + hlen:
        raise ContainerError(f"{path}: truncated JSON header")
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ContainerError(f"{path}: malformed JSON header: {err}") from err
    off += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ContainerError(
            f"{path}: unsupported format_version {header.get('format_version')}"
        )
    if header.get("dtype") != "f64" or header.get("endianness") != "little":
        raise ContainerError(f"{path}: unsupported payload encoding")
    expected = header["payload_len"] * 8
    if len(data) - off != expected:
        raise ContainerError(
            f"{path}: payload length mismatch (header says {expected} bytes, "
            f"file has {len(data) - off})"
        )
    payload = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    return header, payload
