"""The OAVG grid file format.

Layout, all little-endian, no padding::

    b"OAVG" | u32 version (=1) | u32 ndim | ndim x u32 extents | f32 values

Values are row-major with the last dimension fastest. Latents are float64 in
memory, so writing rounds to float32; anything read back is exactly
representable and survives another write/read bit-for-bit.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import BadMagic, ParseError, UnsupportedVersion
from .latent import Latent, Shape

MAGIC = b"OAVG"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def encode_grid(latent: Latent) -> bytes:
    dims = latent.shape.dims
    head = _HEADER.pack(MAGIC, VERSION, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    with np.errstate(over="ignore"):
        vals = latent.values.astype("<f4")
    if not np.all(np.isfinite(vals)):
        raise OverflowError("latent values exceed float32 range")
    return head + vals.tobytes()


def decode_grid(buf: bytes) -> Latent:
    if len(buf) < 4:
        raise ParseError("file shorter than magic bytes", len(buf))
    if buf[:4] != MAGIC:
        raise BadMagic(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise ParseError("truncated header", len(buf))
    _, version, ndim = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}", 4)
    if ndim not in (3, 4):
        raise ParseError(f"ndim must be 3 or 4, got {ndim}", 8)
    off = _HEADER.size
    if len(buf) < off + 4 * ndim:
        raise ParseError("truncated extents", len(buf))
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    try:
        shape = Shape(dims)
    except Exception as exc:
        raise ParseError(f"invalid extents {dims}: {exc}", off) from exc
    off += 4 * ndim
    need = off + 4 * shape.size
    if len(buf) < need:
        raise ParseError(f"truncated values: need {need} bytes, have {len(buf)}", len(buf))
    if len(buf) > need:
        raise ParseError(f"{len(buf) - need} trailing bytes", need)
    vals = np.frombuffer(buf, dtype="<f4", count=shape.size, offset=off)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise ParseError("non-finite value", off + 4 * int(bad[0]))
    return Latent._wrap(vals.astype(np.float64).reshape(dims))


def read_grid(path: str | os.PathLike) -> Latent:
    with open(path, "rb") as fh:
        return decode_grid(fh.read())


def write_grid(path: str | os.PathLike, latent: Latent) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_grid(latent))
