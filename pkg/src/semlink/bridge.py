"""Client for out-of-process model backends.

A backend server (typically wrapping real diffusion / captioning models on
a GPU box) speaks a small length-prefixed TCP protocol; this module holds
the client plus the frame codec. Every message is an 8-byte little-endian
header followed by a payload:

    magic   2 bytes   b"SB"
    op      u8        0 PROBE, 1 ENCODE, 2 DECODE, 3 DENOISE, 4 CAPTION,
                      5 SCORE
    status  u8        0 request, 1 ok, 2 error, 3 unavailable
    length  u32       payload byte count

Payload atoms:

    tensor  u8 ndim, ndim x u32 shape, then float64 little-endian data
    text    u32 byte length, then UTF-8 bytes
    f64     one float64 little-endian

Request payloads: PROBE is empty; ENCODE, DECODE and CAPTION carry one
tensor; DENOISE is u32 step, f64 weight, text caption, then tensors z,
masked latent, mask; SCORE is u8 metric id followed by the metric's inputs
(1 LPIPS: two tensors; 2 FID: two tensor stacks; 3 CLIP: tensor, text).

Replies: PROBE returns u8 count then that many supported op ids; ENCODE,
DECODE and DENOISE return one tensor; CAPTION returns text; SCORE returns
f64. Status 2 and 3 replies carry a text diagnostic instead; 3 means the
server is up but the needed model is not loadable, which callers should
treat as a capability gap rather than a bug.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .blocks import TensorDims
from .inpaint import DiffusionSchedule

MAGIC = b"SB"
HEADER = struct.Struct("<2sBBI")
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


class BridgeError(RuntimeError):
    """Server reported a failure or sent a malformed message."""


class BridgeUnavailable(BridgeError):
    """Server is reachable but lacks the requested capability."""


@dataclass(frozen=True)
class Message:
    op: Op
    status: Status
    payload: bytes


# --- payload atoms ----------------------------------------------------------


def pack_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.float64)
    if array.ndim > 255:
        raise ValueError("tensor rank exceeds the wire limit")
    head = bytes([array.ndim]) + b"".join(_U32.pack(d) for d in array.shape)
    return head + array.astype("<f8").tobytes()


def unpack_tensor(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(payload) - offset < 1:
        raise BridgeError("truncated tensor header")
    ndim = payload[offset]
    offset += 1
    if len(payload) - offset < 4 * ndim:
        raise BridgeError("truncated tensor shape")
    shape = tuple(
        _U32.unpack_from(payload, offset + 4 * k)[0] for k in range(ndim)
    )
    offset += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    nbytes = 8 * count
    if len(payload) - offset < nbytes:
        raise BridgeError("truncated tensor data")
    data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape), offset + nbytes


def pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def unpack_text(payload: bytes, offset: int = 0) -> tuple[str, int]:
    if len(payload) - offset < _U32.size:
        raise BridgeError("truncated text header")
    (n,) = _U32.unpack_from(payload, offset)
    offset += _U32.size
    if len(payload) - offset < n:
        raise BridgeError("truncated text body")
    return payload[offset : offset + n].decode("utf-8"), offset + n


def pack_denoise_request(
    step: int,
    weight: float,
    caption: str,
    z: np.ndarray,
    masked_latent: np.ndarray,
    mask: np.ndarray,
) -> bytes:
    return (
        _U32.pack(step)
        + _F64.pack(weight)
        + pack_text(caption)
        + pack_tensor(z)
        + pack_tensor(masked_latent)
        + pack_tensor(mask)
    )


def unpack_denoise_request(payload: bytes):
    (step,) = _U32.unpack_from(payload, 0)
    (weight,) = _F64.unpack_from(payload, 4)
    caption, offset = unpack_text(payload, 12)
    z, offset = unpack_tensor(payload, offset)
    masked, offset = unpack_tensor(payload, offset)
    mask, offset = unpack_tensor(payload, offset)
    if offset != len(payload):
        raise BridgeError("trailing bytes after DENOISE request")
    return step, weight, caption, z, masked, mask


def encode_message(msg: Message) -> bytes:
    return HEADER.pack(MAGIC, int(msg.op), int(msg.status), len(msg.payload)) + msg.payload


def parse_message_header(header: bytes) -> tuple[Op, Status, int]:
    if len(header) != HEADER.size:
        raise BridgeError(f"header must be {HEADER.size} bytes")
    magic, op, status, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise BridgeError(f"bad magic {magic!r}")
    try:
        return Op(op), Status(status), length
    except ValueError as exc:
        raise BridgeError(f"unknown op or status: {op}/{status}") from exc


# --- client -----------------------------------------------------------------


class BridgeClient:
    """Blocking single-connection client.

    Implements the encoder, decoder, denoiser and captioner call surfaces,
    so one connected client can stand in for the whole toy suite.
    """

    def __init__(self, host: str, port: int, timeout: float = 120.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _recv(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = self._sock.recv(n - got)
            if not chunk:
                raise BridgeError("server closed mid-message")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def call(self, op: Op, payload: bytes) -> bytes:
        self._sock.sendall(encode_message(Message(op, Status.REQUEST, payload)))
        reply_op, status, length = parse_message_header(self._recv(HEADER.size))
        body = self._recv(length) if length else b""
        if reply_op != op:
            raise BridgeError(f"reply op {reply_op.name} does not match {op.name}")
        if status == Status.OK:
            return body
        detail = unpack_text(body)[0] if body else "no detail"
        if status == Status.UNAVAILABLE:
            raise BridgeUnavailable(f"{op.name}: {detail}")
        raise BridgeError(f"{op.name}: {detail}")

    # capability probe

    def probe(self) -> frozenset[Op]:
        body = self.call(Op.PROBE, b"")
        if not body or len(body) != 1 + body[0]:
            raise BridgeError("malformed PROBE reply")
        return frozenset(Op(b) for b in body[1 : 1 + body[0]])

    # backend call surfaces

    def encode(self, image: np.ndarray) -> np.ndarray:
        out, _ = unpack_tensor(self.call(Op.ENCODE, pack_tensor(image)))
        return out

    def decode(self, latent: np.ndarray) -> np.ndarray:
        out, _ = unpack_tensor(self.call(Op.DECODE, pack_tensor(latent)))
        return out

    def caption(self, image: np.ndarray) -> str:
        return unpack_text(self.call(Op.CAPTION, pack_tensor(image)))[0]

    def denoise(self, z_n, level, caption, guidance, masked_latent, lifted_mask):
        payload = pack_denoise_request(
            level, guidance, caption, z_n, masked_latent, lifted_mask
        )
        out, _ = unpack_tensor(self.call(Op.DENOISE, payload))
        return out

    # scoring

    def _score(self, metric: Metric, payload: bytes) -> float:
        body = self.call(Op.SCORE, bytes([int(metric)]) + payload)
        if len(body) != _F64.size:
            raise BridgeError("SCORE reply must be one float64")
        return _F64.unpack(body)[0]

    def lpips(self, a: np.ndarray, b: np.ndarray) -> float:
        return self._score(Metric.LPIPS, pack_tensor(a) + pack_tensor(b))

    def fid(self, set_a: np.ndarray, set_b: np.ndarray) -> float:
        return self._score(Metric.FID, pack_tensor(set_a) + pack_tensor(set_b))

    def clip_score(self, image: np.ndarray, text: str) -> float:
        return self._score(Metric.CLIP, pack_tensor(image) + pack_text(text))


def bridge_suite(
    host: str, port: int, dims: TensorDims, schedule: DiffusionSchedule | None = None
):
    """A backend suite whose every member is the same connected client."""
    from .backends import BackendSuite

    if schedule is None:
        schedule = DiffusionSchedule.default()
    client = BridgeClient(host, port)
    return BackendSuite(
        encoder=client,
        decoder=client,
        denoiser=client,
        captioner=client,
        dims=dims,
        schedule=schedule,
    ), client
