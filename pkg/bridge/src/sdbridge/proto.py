"""Wire format spoken with the link-side client.

Every message is an 8-byte little-endian header, magic b"SB", then op
and status bytes and a u32 payload length. Payloads are concatenated
atoms:

    u8 / u32 / f64   plain little-endian scalars
    text             u32 byte count, UTF-8 bytes
    tensor           u8 rank, rank x u32 shape, float64 data

Requests use status 0. Replies answer with the request's op and status
1 (ok), 2 (error) or 3 (unavailable); the two failure statuses carry a
text atom explaining what went wrong. Status 3 is reserved for missing
capabilities, so a client can fall back instead of treating it as a bug.

This module is self-contained on purpose. The client side ships its own
implementation, and the files under tests/golden/ pin the byte layout
for both.
"""

from __future__ import annotations

import struct
from enum import IntEnum

import numpy as np

MAGIC = b"SB"
HEADER_SIZE = 8
_HEADER = struct.Struct("<2sBBI")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


class Op(IntEnum):
    PROBE = 0
    ENCODE = 1
    DECODE = 2
    DENOISE = 3
    CAPTION = 4
    SCORE = 5


class Status(IntEnum):
    REQUEST = 0
    OK = 1
    ERROR = 2
    UNAVAILABLE = 3


class Metric(IntEnum):
    LPIPS = 1
    FID = 2
    CLIP = 3


class ProtocolError(ValueError):
    pass


def pack_frame(op: Op, status: Status, payload: bytes = b"") -> bytes:
    return _HEADER.pack(MAGIC, int(op), int(status), len(payload)) + payload


def split_header(header: bytes) -> tuple[Op, Status, int]:
    if len(header) != HEADER_SIZE:
        raise ProtocolError(f"expected {HEADER_SIZE} header bytes, got {len(header)}")
    magic, op, status, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    try:
        return Op(op), Status(status), length
    except ValueError as exc:
        raise ProtocolError(str(exc)) from exc


class Writer:
    """Appends payload atoms; ``blob()`` yields the finished payload."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(bytes([value]))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(_U32.pack(value))
        return self

    def f64(self, value: float) -> "Writer":
        self._parts.append(_F64.pack(value))
        return self

    def text(self, value: str) -> "Writer":
        raw = value.encode("utf-8")
        self._parts.append(_U32.pack(len(raw)) + raw)
        return self

    def tensor(self, array: np.ndarray) -> "Writer":
        array = np.ascontiguousarray(array, dtype=np.float64)
        if array.ndim > 255:
            raise ProtocolError("tensor rank exceeds 255")
        self._parts.append(bytes([array.ndim]))
        self._parts.append(b"".join(_U32.pack(d) for d in array.shape))
        self._parts.append(array.astype("<f8").tobytes())
        return self

    def blob(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """Cursor over a payload; every take advances, ``done()`` closes."""

    def __init__(self, buf: bytes) -> None:
        self._buf = buf
        self._pos = 0

    def _need(self, n: int) -> None:
        if len(self._buf) - self._pos < n:
            raise ProtocolError(
                f"payload truncated: wanted {n} bytes at offset {self._pos}"
            )

    def u8(self) -> int:
        self._need(1)
        value = self._buf[self._pos]
        self._pos += 1
        return value

    def u32(self) -> int:
        self._need(4)
        (value,) = _U32.unpack_from(self._buf, self._pos)
        self._pos += 4
        return value

    def f64(self) -> float:
        self._need(8)
        (value,) = _F64.unpack_from(self._buf, self._pos)
        self._pos += 8
        return value

    def text(self) -> str:
        n = self.u32()
        self._need(n)
        raw = self._buf[self._pos : self._pos + n]
        self._pos += n
        return raw.decode("utf-8")

    def tensor(self) -> np.ndarray:
        rank = self.u8()
        shape = tuple(self.u32() for _ in range(rank))
        count = 1
        for d in shape:
            count *= d
        self._need(8 * count)
        data = np.frombuffer(self._buf, dtype="<f8", count=count, offset=self._pos)
        self._pos += 8 * count
        return data.astype(np.float64).reshape(shape)

    def done(self) -> None:
        if self._pos != len(self._buf):
            raise ProtocolError(
                f"{len(self._buf) - self._pos} unread bytes left in payload"
            )


def read_exact(stream, n: int) -> bytes:
    """Read exactly n bytes from a file-like socket stream, b"" on EOF."""
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("stream closed mid-message")
            return b""
        buf += chunk
    return buf


def read_frame(stream) -> tuple[Op, Status, bytes] | None:
    """Next full message from a stream, or None on a clean EOF."""
    header = read_exact(stream, HEADER_SIZE)
    if not header:
        return None
    op, status, length = split_header(header)
    payload = read_exact(stream, length) if length else b""
    if length and len(payload) < length:
        raise ProtocolError("stream closed mid-payload")
    return op, status, payload
