"""Binary field files ("SFLD v1").

Layout, little endian: magic ``SFLD``, u32 version, u8 domain kind, u32 n,
f64 h, n^3 node records of 3 x f64 (x index fastest, NaN for nodes outside
the mask), u32 vertex count V, then V records of position 3 x f64, value
3 x f64, area weight f64 and u8 tag.
"""

from __future__ import annotations

import struct

import numpy as np

from .domain import KIND_CODES, DomainGrid, build_domain
from .fields import SphereField

MAGIC = b"SFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIBId")
_VERTEX = np.dtype([("pos", "<f8", 3), ("val", "<f8", 3), ("w", "<f8"), ("tag", "u1")])


class FormatError(ValueError):
    pass


class TruncatedError(FormatError):
    pass


def encode_field(field: SphereField) -> bytes:
    g = field.grid
    head = _HEADER.pack(MAGIC, VERSION, KIND_CODES[g.kind], g.n, g.h)
    nodes = np.where(g.node_mask[..., None], field.nodes, np.nan)
    # array index is (x, y, z); x fastest means writing the (z, y, x) transpose in C order
    body = np.ascontiguousarray(nodes.transpose(2, 1, 0, 3), dtype="<f8").tobytes()
    s = g.surface
    rec = np.empty(s.n_vertices, dtype=_VERTEX)
    rec["pos"] = s.vertices
    rec["val"] = field.vertex_values
    rec["w"] = s.weights
    rec["tag"] = s.tags
    return head + body + struct.pack("<I", s.n_vertices) + rec.tobytes()


def save_field(field: SphereField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_field(field))


def decode_field(data: bytes, grid: DomainGrid | None = None) -> SphereField:
    if len(data) < _HEADER.size:
        raise TruncatedError("file shorter than the header")
    magic, version, kind_code, n, h = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if kind_code not in kinds:
        raise FormatError(f"unknown domain kind code {kind_code}")
    off = _HEADER.size
    nbytes = n**3 * 24
    if len(data) < off + nbytes + 4:
        raise TruncatedError("node block truncated")
    nodes = np.frombuffer(data, dtype="<f8", count=n**3 * 3, offset=off).reshape(n, n, n, 3).transpose(2, 1, 0, 3)
    off += nbytes
    (nv,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + nv * _VERTEX.itemsize:
        raise TruncatedError("vertex block truncated")
    if len(data) > off + nv * _VERTEX.itemsize:
        raise FormatError("trailing bytes after the vertex block")
    rec = np.frombuffer(data, dtype=_VERTEX, count=nv, offset=off)
    if grid is None:
        grid = build_domain(kinds[kind_code], int(n))
    if grid.kind != kinds[kind_code] or grid.n != n or grid.h != h:
        raise FormatError("file does not match the given grid")
    if nv != grid.surface.n_vertices or not np.array_equal(rec["pos"], grid.surface.vertices):
        raise FormatError("boundary surface does not match the rebuilt domain")
    return SphereField(grid, np.array(nodes), np.array(rec["val"]))


def load_field(path, grid: DomainGrid | None = None) -> SphereField:
    with open(path, "rb") as fh:
        return decode_field(fh.read(), grid)
