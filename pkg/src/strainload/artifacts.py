"""Versioned binary container for operators, bases and inverse maps.

Layout (all integers little-endian)::

    magic     8 bytes   b"SLDCONT\\0"
    version   uint32
    reserved  uint32
    hlen      uint64    length of the JSON header (padded to 8 bytes)
    header    hlen bytes JSON: {"meta": {...}, "blocks": [...]}
    blocks    each 8-byte aligned, zero padded
    sha256    32 bytes  digest of everything above

Dense blocks are row-major. Sparse blocks hold (row int64, col int64,
value float64) triplets sorted by (row, col) with duplicates summed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MAGIC = b"SLDCONT\0"
VERSION = 1


class ContainerError(ValueError):
    pass


def atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        if sp.issparse(a):
            coo = _canonical_coo(a)
            for part in (coo.row, coo.col, coo.data):
                h.update(np.ascontiguousarray(part).tobytes())
            h.update(repr(a.shape).encode())
        else:
            a = np.ascontiguousarray(a)
            h.update(repr((a.shape, a.dtype.str)).encode())
            h.update(a.tobytes())
    return h.hexdigest()


def _pad8(b: bytes, fill=b"\0") -> bytes:
    return b + fill * (-len(b) % 8)


def _canonical_coo(a):
    coo = sp.coo_matrix(a)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    return sp.coo_matrix((coo.data[order].astype("<f8"),
                          (coo.row[order].astype("<i8"), coo.col[order].astype("<i8"))),
                         shape=a.shape)


def encode_container(arrays: dict, meta: dict | None = None) -> bytes:
    blocks, payload = [], []
    offset = 0
    for name in sorted(arrays):
        a = arrays[name]
        if sp.issparse(a):
            coo = _canonical_coo(a)
            raw = (coo.row.astype("<i8").tobytes() + coo.col.astype("<i8").tobytes()
                   + coo.data.astype("<f8").tobytes())
            desc = {"name": name, "kind": "sparse", "shape": list(a.shape), "nnz": int(coo.nnz)}
        else:
            a = np.asarray(a)
            dtype = "<i8" if np.issubdtype(a.dtype, np.integer) else "<f8"
            raw = np.ascontiguousarray(a, dtype=dtype).tobytes()
            desc = {"name": name, "kind": "dense", "shape": list(a.shape), "dtype": dtype}
        desc.update(offset=offset, nbytes=len(raw))
        raw = _pad8(raw)
        offset += len(raw)
        blocks.append(desc)
        payload.append(raw)
    header = _pad8(json.dumps({"meta": meta or {}, "blocks": blocks}, sort_keys=True).encode(),
                   fill=b" ")
    body = MAGIC + struct.pack("<IIQ", VERSION, 0, len(header)) + header + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def decode_container(data: bytes):
    if len(data) < 56 or data[:8] != MAGIC:
        raise ContainerError("not a strainload container (bad magic bytes)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError("container checksum mismatch (file corrupted)")
    version, _, hlen = struct.unpack("<IIQ", body[8:24])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(body[24:24 + hlen])
    base = 24 + hlen
    arrays = {}
    for d in header["blocks"]:
        raw = body[base + d["offset"]: base + d["offset"] + d["nbytes"]]
        shape = tuple(d["shape"])
        if d["kind"] == "sparse":
            nnz = d["nnz"]
            rows = np.frombuffer(raw[:8 * nnz], "<i8")
            cols = np.frombuffer(raw[8 * nnz:16 * nnz], "<i8")
            vals = np.frombuffer(raw[16 * nnz:], "<f8")
            arrays[d["name"]] = sp.csr_matrix((vals, (rows, cols)), shape=shape)
        else:
            arrays[d["name"]] = np.frombuffer(raw, d["dtype"]).reshape(shape).copy()
    return arrays, header["meta"]


def save_container(path, arrays: dict, meta: dict | None = None) -> str:
    """Write atomically; returns the sha256 of the file."""
    data = encode_container(arrays, meta)
    atomic_write(path, data)
    return sha256_bytes(data)


def load_container(path):
    return decode_container(Path(path).read_bytes())
