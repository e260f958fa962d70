"""Little-endian binary containers: VEL1 (velocity), SDI1 (survey), SPK1 (MLP checkpoint).

Every container ends with a CRC32 (zlib polynomial) of all preceding bytes.
Writers go through :func:`atomic_write` so a crash never leaves a partial file.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

VEL_MAGIC = b"VEL1"
SDI_MAGIC = b"SDI1"
SPK_MAGIC = b"SPK1"
VERSION = 1


def atomic_write(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _seal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    """Cursor over a byte buffer that reports truncation with the failing offset."""

    def __init__(self, buf: bytes, start=0):
        self.buf = buf
        self.pos = start

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated: need {n} bytes, have {len(self.buf) - self.pos}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count):
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count)
        return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))


def _open(buf: bytes, magic: bytes, start=0) -> _Reader:
    r = _Reader(buf, start)
    got = r.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", start)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", start + 4)
    return r


def _check_crc(r: _Reader, start: int):
    body_end = r.pos
    (crc,) = r.unpack("<I")
    actual = zlib.crc32(r.buf[start:body_end]) & 0xFFFFFFFF
    if crc != actual:
        raise FormatError(f"CRC mismatch: stored {crc:#010x}, computed {actual:#010x}", body_end)


# --- VEL1 -------------------------------------------------------------------


def encode_velocity(values: np.ndarray, spacing) -> bytes:
    """Dims are written in array order (depth first); values depth-fastest."""
    values = np.asarray(values, dtype=np.float32)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float32), (values.ndim,))
    body = [VEL_MAGIC, struct.pack("<IB", VERSION, values.ndim)]
    body.append(struct.pack(f"<{values.ndim}I", *values.shape))
    body.append(spacing.astype("<f4").tobytes())
    body.append(values.astype("<f4").tobytes(order="F"))
    return _seal(b"".join(body))


def decode_velocity(buf: bytes):
    """Return ``(values float32 array, spacing tuple)``."""
    r = _open(buf, VEL_MAGIC)
    (ndim,) = r.unpack("<B")
    if ndim not in (2, 3):
        raise FormatError(f"ndim must be 2 or 3, got {ndim}", r.pos - 1)
    dims = r.unpack(f"<{ndim}I")
    spacing = tuple(float(s) for s in r.array("f4", ndim))
    flat = r.array("f4", int(np.prod(dims)))
    _check_crc(r, 0)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after CRC", r.pos)
    return flat.reshape(dims, order="F").copy(), spacing


# --- SDI1 -------------------------------------------------------------------

_TRACE_HEADER = np.dtype([
    ("shot_id", "<u4"), ("rcv_index", "<u4"), ("src", "<f4", (3,)), ("rcv", "<f4", (3,)),
])


def encode_survey(data, src, rcv, shot_id, rcv_index, record_dt) -> bytes:
    data = np.asarray(data, dtype="<f4")
    n, length = data.shape
    header = np.empty(n, dtype=_TRACE_HEADER)
    header["shot_id"] = shot_id
    header["rcv_index"] = rcv_index
    header["src"] = src
    header["rcv"] = rcv
    rec = np.empty(n, dtype=[("h", _TRACE_HEADER), ("u", "<f4", (length,))])
    rec["h"] = header
    rec["u"] = data
    body = SDI_MAGIC + struct.pack("<IIIf", VERSION, n, length, record_dt) + rec.tobytes()
    return _seal(body)


def decode_survey(buf: bytes) -> dict:
    r = _open(buf, SDI_MAGIC)
    n, length, record_dt = r.unpack("<IIf")
    rec_dtype = np.dtype([("h", _TRACE_HEADER), ("u", "<f4", (length,))])
    raw = r.take(rec_dtype.itemsize * n)
    _check_crc(r, 0)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after CRC", r.pos)
    rec = np.frombuffer(raw, dtype=rec_dtype)
    return {
        "data": rec["u"].astype(np.float32),
        "src": rec["h"]["src"].astype(np.float32),
        "rcv": rec["h"]["rcv"].astype(np.float32),
        "shot_id": rec["h"]["shot_id"].astype(np.int64),
        "rcv_index": rec["h"]["rcv_index"].astype(np.int64),
        "record_dt": float(record_dt),
    }


# --- SPK1 -------------------------------------------------------------------


def encode_mlp(weights, biases) -> bytes:
    body = [SPK_MAGIC, struct.pack("<II", VERSION, len(weights))]
    for W, b in zip(weights, biases):
        rows, cols = W.shape
        body.append(struct.pack("<II", rows, cols))
        body.append(np.asarray(W, dtype="<f8").tobytes(order="C"))
        body.append(np.asarray(b, dtype="<f8").tobytes())
    return _seal(b"".join(body))


def decode_mlp(buf: bytes, start=0):
    """Return ``(weights, biases, end_offset)``; ``end_offset`` allows concatenated blobs."""
    r = _open(buf, SPK_MAGIC, start)
    (n_layers,) = r.unpack("<I")
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = r.unpack("<II")
        weights.append(r.array("f8", rows * cols).reshape(rows, cols))
        biases.append(r.array("f8", rows))
    _check_crc(r, start)
    return weights, biases, r.pos


def read_bytes(path) -> bytes:
    return Path(path).read_bytes()
