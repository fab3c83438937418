"""Binary container for id-keyed float32 vector tables.

One layout backs both on-disk caches (definition matrices, magic
``CVDM``; patch-embedding grids, magic ``CVPE``)::

    magic[4] | u16 version | u32 count | u32 dim
    | u16 model_id_len | model_id utf-8
    | 32-byte content digest (sha256, raw)
    | count x (u16 id_len | id utf-8)
    | count x dim little-endian f32

Everything is little-endian. Rows reload with zero re-encoding work.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CacheError

FORMAT_VERSION = 1

_HEAD = struct.Struct("<4sHIIH")


def write_vector_table(
    path: str | Path,
    magic: bytes,
    ids: list[str],
    vectors: np.ndarray,
    model_id: str,
    digest: bytes,
) -> None:
    """Atomically write a vector table (tmp file + rename)."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    if len(digest) != 32:
        raise ValueError("digest must be 32 raw bytes")
    rows = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32))
    if rows.ndim != 2 or rows.shape[0] != len(ids):
        raise ValueError(f"vectors shape {rows.shape} does not match {len(ids)} ids")
    model_bytes = model_id.encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_HEAD.pack(magic, FORMAT_VERSION, rows.shape[0], rows.shape[1], len(model_bytes)))
        fh.write(model_bytes)
        fh.write(digest)
        for sid in ids:
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(rows.tobytes(order="C"))
    tmp.replace(path)


def read_vector_table(
    path: str | Path, magic: bytes
) -> tuple[list[str], np.ndarray, str, bytes]:
    """Read a table back; returns (ids, float32 rows, model_id, digest)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
        got_magic, version, count, dim, model_len = _HEAD.unpack_from(blob, 0)
        if got_magic != magic:
            raise CacheError(f"{path}: magic {got_magic!r} != expected {magic!r}")
        if version != FORMAT_VERSION:
            raise CacheError(f"{path}: unsupported version {version}")
        off = _HEAD.size
        model_id = blob[off : off + model_len].decode("utf-8")
        off += model_len
        digest = blob[off : off + 32]
        off += 32
        ids: list[str] = []
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            ids.append(blob[off : off + id_len].decode("utf-8"))
            off += id_len
        expected = count * dim * 4
        data = blob[off : off + expected]
        if len(data) != expected:
            raise CacheError(f"{path}: truncated row data")
        rows = np.frombuffer(data, dtype="<f4").reshape(count, dim)
    except CacheError:
        raise
    except Exception as exc:
        raise CacheError(f"{path}: corrupt vector table: {exc}") from exc
    return ids, rows, model_id, digest
