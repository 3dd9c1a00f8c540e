"""Link-layer frame format.

Every frame is a 10-byte little-endian header followed by a payload:

    magic   2 bytes   b"SL"
    kind    u8        1 META, 2 TEXT, 3 LATENT, 4 REQ, 5 FIN
    round   u16       request round the frame answers (0 for setup frames)
    length  u32       payload byte count
    pad     u8        modulation pad bits appended before symbol mapping

Payloads:

    META    six u32 tensor dims (c, h, w, c_lat, h_lat, w_lat), u16 block
            side, then the withheld-block bitmap, row-major, 1 = withheld,
            packed MSB-first into ceil(n/8) bytes.
    TEXT    channel symbols of the coded caption, complex128 little-endian.
    LATENT  u32 block count, that many (u16 row, u16 col) pairs, then the
            channel symbols of the coded coefficients.
    REQ     u32 block count, then (u16 row, u16 col) pairs.
    FIN     empty.

META, REQ and FIN ride the control plane and are assumed error-free; TEXT
and LATENT symbols are what the channel hands the receiver.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .blocks import BlockIndex, BlockMask, TensorDims

MAGIC = b"SL"
HEADER = struct.Struct("<2sBHIB")
_DIMS = struct.Struct("<6IH")
_COUNT = struct.Struct("<I")
_PAIR = struct.Struct("<HH")


class FrameKind(IntEnum):
    META = 1
    TEXT = 2
    LATENT = 3
    REQ = 4
    FIN = 5


class WireError(ValueError):
    """Malformed or out-of-protocol frame."""


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    round: int
    pad_bits: int
    payload: bytes


def encode_frame(frame: Frame) -> bytes:
    header = HEADER.pack(
        MAGIC, int(frame.kind), frame.round, len(frame.payload), frame.pad_bits
    )
    return header + frame.payload


def parse_header(header: bytes) -> tuple[FrameKind, int, int, int]:
    """Returns (kind, round, payload length, pad bits)."""
    if len(header) != HEADER.size:
        raise WireError(f"header must be {HEADER.size} bytes")
    magic, kind, rnd, length, pad = HEADER.unpack(header)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    try:
        kind = FrameKind(kind)
    except ValueError as exc:
        raise WireError(f"unknown frame kind {kind}") from exc
    return kind, rnd, length, pad


def decode_frame(data: bytes) -> Frame:
    """Decode one complete frame from an exact byte string."""
    kind, rnd, length, pad = parse_header(data[: HEADER.size])
    payload = data[HEADER.size :]
    if len(payload) != length:
        raise WireError(f"expected {length} payload bytes, got {len(payload)}")
    return Frame(kind, rnd, pad, payload)


# --- payload codecs ---------------------------------------------------------


def pack_meta(dims: TensorDims, mask: BlockMask) -> bytes:
    head = _DIMS.pack(
        dims.c, dims.h, dims.w, dims.c_lat, dims.h_lat, dims.w_lat, mask.block_side
    )
    return head + np.packbits(mask.grid.ravel()).tobytes()


def unpack_meta(payload: bytes) -> tuple[TensorDims, BlockMask]:
    if len(payload) < _DIMS.size:
        raise WireError("META payload too short")
    c, h, w, c_lat, h_lat, w_lat, side = _DIMS.unpack_from(payload)
    dims = TensorDims(c, h, w, c_lat, h_lat, w_lat)
    if side == 0 or h_lat % side or w_lat % side:
        raise WireError("block side does not divide the latent grid")
    n_h, n_w = h_lat // side, w_lat // side
    n = n_h * n_w
    bitmap = np.frombuffer(payload, dtype=np.uint8, offset=_DIMS.size)
    if bitmap.size != -(-n // 8):
        raise WireError("META bitmap length mismatch")
    grid = np.unpackbits(bitmap)[:n].reshape(n_h, n_w)
    return dims, BlockMask(grid, side)


def pack_symbols(symbols: np.ndarray) -> bytes:
    return np.asarray(symbols, dtype=np.complex128).astype("<c16").tobytes()


def unpack_symbols(payload: bytes) -> np.ndarray:
    if len(payload) % 16:
        raise WireError("symbol payload is not a whole number of complex128")
    return np.frombuffer(payload, dtype="<c16").astype(np.complex128)


def pack_indices(indices: tuple[BlockIndex, ...]) -> bytes:
    out = [_COUNT.pack(len(indices))]
    out.extend(_PAIR.pack(i, j) for i, j in indices)
    return b"".join(out)


def unpack_indices(payload: bytes, offset: int = 0) -> tuple[tuple[BlockIndex, ...], int]:
    """Returns the index list and the offset just past it."""
    if len(payload) - offset < _COUNT.size:
        raise WireError("truncated index list")
    (count,) = _COUNT.unpack_from(payload, offset)
    offset += _COUNT.size
    need = count * _PAIR.size
    if len(payload) - offset < need:
        raise WireError("truncated index list")
    indices = tuple(
        _PAIR.unpack_from(payload, offset + k * _PAIR.size) for k in range(count)
    )
    return indices, offset + need


def pack_latent(indices: tuple[BlockIndex, ...], symbols: np.ndarray) -> bytes:
    return pack_indices(indices) + pack_symbols(symbols)


def unpack_latent(payload: bytes) -> tuple[tuple[BlockIndex, ...], np.ndarray]:
    indices, offset = unpack_indices(payload)
    return indices, unpack_symbols(payload[offset:])
