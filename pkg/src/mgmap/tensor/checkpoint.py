"""MGT1 tensor checkpoints.

Layout (little-endian)::

    b"MGT1" | u32 count | count * entry | [trailer]
    entry   = u32 name_len | name (UTF-8) | u8 rank | rank * u32 extent | f32 payload (row-major)
    trailer = b"CFG1" | u32 json_len | JSON (UTF-8, sorted keys) | 32-byte sha256 of the JSON

Entries are written in lexicographic name order.  The optional trailer
carries the run configuration that produced the tensors.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MGT1"
TRAILER_MAGIC = b"CFG1"


class CheckpointError(ValueError):
    pass


def config_hash(config: Mapping | None) -> str:
    return hashlib.sha256(canonical_json(config or {})).hexdigest()


def canonical_json(config: Mapping) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode(tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    if config is not None:
        blob = canonical_json(config)
        parts += [TRAILER_MAGIC, struct.pack("<I", len(blob)), blob, hashlib.sha256(blob).digest()]
    return b"".join(parts)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict | None, bool]:
    """Returns (tensors, config, hash_ok)."""
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes for {what} at offset {pos}, "
                                  f"file has {len(buf)}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError("not an MGT1 checkpoint (bad magic)")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"entry name is not UTF-8 at offset {pos}") from exc
        (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"extents of {name}"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n, f"payload of {name}"), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float32)
    config, ok = None, True
    if pos < len(buf):
        if take(4, "trailer magic") != TRAILER_MAGIC:
            raise CheckpointError(f"unexpected bytes after entries at offset {pos - 4}")
        (blen,) = struct.unpack("<I", take(4, "config length"))
        blob = take(blen, "config")
        digest = take(32, "config hash")
        ok = hashlib.sha256(blob).digest() == digest
        config = json.loads(blob.decode("utf-8"))
        if pos != len(buf):
            raise CheckpointError(f"{len(buf) - pos} trailing bytes after config trailer")
    return tensors, config, ok


def save(path, tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> None:
    Path(path).write_bytes(encode(tensors, config))


def load(path, expected_config: Mapping | None = None, allow_mismatch: bool = False
         ) -> tuple[dict[str, np.ndarray], dict | None]:
    """Read a checkpoint, verifying the embedded config hash.

    A corrupted trailer, or a stored config differing from
    ``expected_config``, is refused unless ``allow_mismatch`` is set.
    """
    tensors, config, ok = decode(Path(path).read_bytes())
    if not allow_mismatch:
        if not ok:
            raise CheckpointError("config hash mismatch: embedded config does not match its hash")
        if expected_config is not None and config is not None \
                and config_hash(config) != config_hash(expected_config):
            raise CheckpointError("config hash mismatch: checkpoint was written under a different config")
    return tensors, config
