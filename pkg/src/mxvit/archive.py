"""Packed MXInt tensor archive: a byte-exact container for quantized tensors.

Layout (all integers little-endian):

    magic  b"MXAR"
    u16    format version (1)
    u32    tensor count
    per tensor:
        u16    name length, then UTF-8 name bytes
        u8     tensor class (0 = weight, 1 = activation)
        u8     mantissa bits m
        u8     exponent bits
        u8     block axis
        u32    block size B
        u8     rank, then u32 dims
        i8[nblocks]              shared exponents
        i8/i16[padded elements]  mantissas, sign-extended to whole bytes

Tensors are written sorted by name so identical inputs produce identical
bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .formats import MXIntTensor

MAGIC = b"MXAR"
VERSION = 1

_CLASS_CODE = {"weight": 0, "activation": 1}
_CLASS_NAME = {v: k for k, v in _CLASS_CODE.items()}


def _mantissa_dtype(m: int) -> np.dtype:
    return np.dtype("<i1") if m <= 8 else np.dtype("<i2")


def write_archive(path: str | Path, tensors: dict[str, MXIntTensor]) -> bytes:
    """Serialize tensors to ``path``; returns the bytes for digesting."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(tensors))
    for name in sorted(tensors):
        t = tensors[name]
        enc = name.encode()
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<BBBB", _CLASS_CODE[t.klass], t.mantissa_bits,
                           t.exponent_bits, t.block_axis)
        out += struct.pack("<I", t.block_size)
        out += struct.pack("<B", len(t.shape))
        for d in t.shape:
            out += struct.pack("<I", d)
        out += t.exponents.astype("<i1").tobytes()
        out += t.mantissas.astype(_mantissa_dtype(t.mantissa_bits)).tobytes()
    data = bytes(out)
    Path(path).write_bytes(data)
    return data


def read_archive(path: str | Path) -> dict[str, MXIntTensor]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"archive not found: {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise ManifestError(f"{path} is not an MXInt archive")
    off = 4
    version, count = struct.unpack_from("<HI", data, off)
    off += 6
    if version != VERSION:
        raise ManifestError(f"unsupported archive version {version}")
    tensors: dict[str, MXIntTensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        code, m, ebits, baxis = struct.unpack_from("<BBBB", data, off)
        off += 4
        (bsize,) = struct.unpack_from("<I", data, off)
        off += 4
        (rank,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        nblocks_axis = -(-shape[baxis] // bsize)
        eshape = list(shape)
        eshape[baxis] = nblocks_axis
        mshape = list(shape)
        mshape[baxis] = nblocks_axis * bsize
        nexp = int(np.prod(eshape))
        exps = np.frombuffer(data, dtype="<i1", count=nexp, offset=off)
        off += nexp
        mdt = _mantissa_dtype(m)
        nman = int(np.prod(mshape))
        mants = np.frombuffer(data, dtype=mdt, count=nman, offset=off)
        off += nman * mdt.itemsize
        tensors[name] = MXIntTensor(
            shape=tuple(shape), block_axis=baxis, mantissa_bits=m,
            block_size=bsize, exponent_bits=ebits, klass=_CLASS_NAME[code],
            mantissas=mants.astype(np.int64).reshape(mshape),
            exponents=exps.astype(np.int64).reshape(eshape),
        )
    return tensors
