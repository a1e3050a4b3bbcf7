"""Binary tensor container and checkpoint file formats.

A GCMR file holds one n-dimensional array::

    b"GCMR1" | version u8 | dtype u8 | ndim u8 | dims u32[ndim] | payload

All multi-byte fields are little-endian; the payload is row major.
Dtype codes: 0 = float32, 1 = complex64 stored as interleaved float32
pairs, 2 = float64. Round trips are byte exact.

A checkpoint bundles many named GCMR records behind a small JSON header::

    b"GCKP1" | version u8 | meta_len u32 | meta_json | n u32 | records
    record = name_len u16 | name utf8 | GCMR bytes

Records are written sorted by name, so identical state always produces
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"GCMR1"
VERSION = 1
CKPT_MAGIC = b"GCKP1"
CKPT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<c8"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("complex64"): 1, np.dtype("float64"): 2}


class GcmrError(ValueError):
    """Malformed, truncated, or unsupported container data."""


def encode_array(arr: np.ndarray) -> bytes:
    a = np.asarray(arr)
    if not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)  # note: would also flatten 0-d to 1-d
    if a.dtype not in _CODES:
        raise GcmrError(f"unsupported dtype {a.dtype}; use float32/complex64/float64")
    if a.ndim > 255:
        raise GcmrError("too many dimensions")
    code = _CODES[a.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.astype(_DTYPES[code], copy=False).tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    arr, used = _decode_at(buf, 0)
    if used != len(buf):
        raise GcmrError(f"{len(buf) - used} trailing bytes after payload")
    return arr


def _decode_at(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    if len(buf) - off < len(MAGIC) + 3:
        raise GcmrError("truncated header")
    if buf[off:off + 5] != MAGIC:
        raise GcmrError(f"bad magic {buf[off:off + 5]!r}")
    version, code, ndim = struct.unpack_from("<BBB", buf, off + 5)
    if version != VERSION:
        raise GcmrError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise GcmrError(f"unknown dtype code {code}")
    pos = off + 8
    if len(buf) - pos < 4 * ndim:
        raise GcmrError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dt = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
    if ndim == 0:
        dims = ()
        nbytes = dt.itemsize
    if len(buf) - pos < nbytes:
        raise GcmrError(f"payload is {len(buf) - pos} bytes, expected {nbytes}")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(dims).copy()
    return arr, pos + nbytes


def write_gcmr(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_array(arr))


def read_gcmr(path: str | Path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def write_checkpoint_file(path: str | Path, arrays: dict[str, np.ndarray],
                          meta: dict[str, Any]) -> None:
    meta_json = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<B", CKPT_VERSION)
    out += struct.pack("<I", len(meta_json))
    out += meta_json
    out += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        nb = name.encode()
        out += struct.pack("<H", len(nb))
        out += nb
        out += encode_array(arrays[name])
    Path(path).write_bytes(bytes(out))


def read_checkpoint_file(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    buf = Path(path).read_bytes()
    if len(buf) < len(CKPT_MAGIC) + 5:
        raise GcmrError("truncated checkpoint")
    if buf[:5] != CKPT_MAGIC:
        raise GcmrError(f"bad checkpoint magic {buf[:5]!r}")
    (version,) = struct.unpack_from("<B", buf, 5)
    if version != CKPT_VERSION:
        raise GcmrError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", buf, 6)
    pos = 10
    if len(buf) - pos < meta_len + 4:
        raise GcmrError("truncated checkpoint metadata")
    meta = json.loads(buf[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buf) - pos < 2:
            raise GcmrError("truncated record name")
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        arrays[name], pos = _decode_at(buf, pos)
    if pos != len(buf):
        raise GcmrError("trailing bytes after checkpoint records")
    return arrays, meta


def write_pgm(path: str | Path, img: np.ndarray, bits: int = 16) -> None:
    """Write a magnitude image as a binary portable graymap (P5).

    The image is scaled so its maximum maps to the full dynamic range;
    an all-zero image stays all zero.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    maxval = (1 << bits) - 1
    peak = img.max()
    scaled = np.zeros_like(img) if peak <= 0 else np.clip(img / peak, 0.0, 1.0) * maxval
    q = np.rint(scaled)
    data = q.astype(">u2").tobytes() if bits == 16 else q.astype(np.uint8).tobytes()
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + data)
