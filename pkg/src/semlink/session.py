"""End-to-end sessions: a transmitter, a byte transport, and the loop.

The transmitter answers a fixed protocol (setup frames, then one LATENT
frame per REQ) so the receiver-side loop in :mod:`semlink.control` never
touches transmitter state directly. Two transports are provided: an
in-process byte pipe for simulation speed and a TCP client/server pair to
show nothing depends on both ends sharing an address space.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass, replace

import numpy as np

from .backends import BackendSuite
from .blocks import (
    BlockIndex,
    extract_blocks,
    partition_dims,
    split_sets,
)
from .control import (
    BlockDelivery,
    InitialDelivery,
    ReplaySchedule,
    SessionConfig,
    SessionResult,
    draw_initial_mask,
    drive_session,
    spawn_streams,
)
from .phy import (
    TAIL_BITS,
    AwgnChannel,
    ChannelConfig,
    coded_payload_bits,
    latent_to_symbols,
    symbols_to_latent,
    symbols_to_text,
    text_to_symbols,
)
from .wire import (
    HEADER,
    Frame,
    FrameKind,
    WireError,
    encode_frame,
    pack_latent,
    pack_meta,
    pack_indices,
    pack_symbols,
    parse_header,
    unpack_latent,
    unpack_meta,
    unpack_indices,
    unpack_symbols,
)


def _derive_text_length(n_symbols: int, pad_bits: int) -> int:
    coded = 4 * n_symbols - pad_bits
    info = coded // 2 - TAIL_BITS
    if coded % 2 or info < 0 or info % 8:
        raise WireError("TEXT frame length is not a whole character count")
    return info // 8


class Transmitter:
    """Holds the source image and serves latent blocks on demand.

    TEXT and LATENT payloads pass through independently seeded noise
    streams, so a session that skips the caption still sees the exact same
    latent noise sequence as its captioned twin.
    """

    def __init__(
        self,
        image: np.ndarray,
        cfg: SessionConfig,
        suite: BackendSuite,
        channel: ChannelConfig,
        send_caption: bool = True,
    ):
        self.cfg = cfg
        self.suite = suite
        self.z0 = suite.encoder.encode(image)
        self.caption = suite.captioner.caption(image) if send_caption else None
        n_h, n_w, _ = partition_dims(cfg.dims, cfg.block_side)
        mask_rng = spawn_streams(cfg.seed)[0]
        self.mask0 = draw_initial_mask(n_h, n_w, cfg.block_side, cfg.q0, mask_rng)
        sets = split_sets(self.mask0)
        self._pending = set(sets.withheld)
        text_ss, latent_ss = np.random.SeedSequence(channel.seed).spawn(2)
        self._text_channel = AwgnChannel(channel, np.random.default_rng(text_ss))
        self._latent_channel = AwgnChannel(channel, np.random.default_rng(latent_ss))
        self.noise_var = channel.noise_var

    def _latent_frame(self, indices: tuple[BlockIndex, ...], rnd: int) -> bytes:
        blocks = extract_blocks(self.z0, indices, self.cfg.block_side)
        symbols, _, pad = latent_to_symbols(blocks)
        noisy = self._latent_channel.transmit(symbols)
        return encode_frame(
            Frame(FrameKind.LATENT, rnd, pad, pack_latent(indices, noisy))
        )

    def initial_frames(self) -> list[bytes]:
        frames = [
            encode_frame(Frame(FrameKind.META, 0, 0, pack_meta(self.cfg.dims, self.mask0)))
        ]
        if self.caption is not None:
            symbols, _, pad = text_to_symbols(self.caption)
            noisy = self._text_channel.transmit(symbols)
            frames.append(encode_frame(Frame(FrameKind.TEXT, 0, pad, pack_symbols(noisy))))
        first = tuple(sorted(split_sets(self.mask0).transmitted))
        frames.append(self._latent_frame(first, 0))
        return frames

    def serve(self, frame_bytes: bytes) -> bytes:
        """Answer one inbound frame; empty reply means the session is over."""
        frame = _decode_exact(frame_bytes)
        if frame.kind == FrameKind.FIN:
            return b""
        if frame.kind != FrameKind.REQ:
            raise WireError(f"transmitter cannot serve {frame.kind.name}")
        indices, _ = unpack_indices(frame.payload)
        for idx in indices:
            if idx not in self._pending:
                raise WireError(f"block {idx} already served or unknown")
        self._pending.difference_update(indices)
        return self._latent_frame(indices, frame.round)


def _decode_exact(frame_bytes: bytes) -> Frame:
    kind, rnd, length, pad = parse_header(frame_bytes[: HEADER.size])
    if len(frame_bytes) != HEADER.size + length:
        raise WireError("frame byte count disagrees with its header")
    return Frame(kind, rnd, pad, frame_bytes[HEADER.size :])


# --- transports -------------------------------------------------------------


class MemoryEndpoint:
    """In-process pipe: outbound frames are served synchronously."""

    def __init__(self, transmitter: Transmitter):
        self._tx = transmitter
        self._inbox = bytearray(b"".join(transmitter.initial_frames()))

    def send_bytes(self, data: bytes) -> None:
        self._inbox += self._tx.serve(data)

    def recv_bytes(self, n: int) -> bytes:
        if len(self._inbox) < n:
            raise WireError("stream ended mid-frame")
        out = bytes(self._inbox[:n])
        del self._inbox[:n]
        return out

    def close(self) -> None:
        pass


class SocketEndpoint:
    """Blocking TCP client endpoint."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def send_bytes(self, data: bytes) -> None:
        self._sock.sendall(data)

    def recv_bytes(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = self._sock.recv(n - got)
            if not chunk:
                raise WireError("connection closed mid-frame")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        self._sock.close()


def _read_frame_from(recv) -> bytes:
    header = recv(HEADER.size)
    _, _, length, _ = parse_header(header)
    return header + (recv(length) if length else b"")


def serve_connection(conn: socket.socket, transmitter: Transmitter) -> None:
    """Blocking per-connection transmitter loop; returns at FIN or EOF."""

    def recv(n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = conn.recv(n - got)
            if not chunk:
                raise ConnectionError("peer closed")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    for frame in transmitter.initial_frames():
        conn.sendall(frame)
    while True:
        try:
            inbound = _read_frame_from(recv)
        except ConnectionError:
            return
        reply = transmitter.serve(inbound)
        if not reply:
            return
        conn.sendall(reply)


def serve_once(transmitter: Transmitter, host: str = "127.0.0.1") -> tuple[int, threading.Thread]:
    """Spawn a one-shot TCP server; returns (port, thread)."""
    listener = socket.create_server((host, 0))
    port = listener.getsockname()[1]

    def run() -> None:
        with listener:
            conn, _ = listener.accept()
            with conn:
                serve_connection(conn, transmitter)

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return port, thread


# --- receiver-side link -----------------------------------------------------


@dataclass
class FrameLink:
    """Adapts a byte endpoint to the session loop's delivery interface."""

    endpoint: object
    cfg: SessionConfig
    noise_var: float
    soft: bool = True

    def _next_frame(self) -> Frame:
        header = self.endpoint.recv_bytes(HEADER.size)
        kind, rnd, length, pad = parse_header(header)
        payload = self.endpoint.recv_bytes(length) if length else b""
        return Frame(kind, rnd, pad, payload)

    def _decode_blocks(self, frame: Frame) -> tuple[tuple[BlockIndex, ...], np.ndarray]:
        indices, symbols = unpack_latent(frame.payload)
        side = self.cfg.block_side
        per_block = self.cfg.dims.c_lat * side * side
        coeffs = symbols_to_latent(
            symbols, len(indices) * per_block, frame.pad_bits, self.noise_var, self.soft
        )
        return indices, coeffs.reshape(len(indices), self.cfg.dims.c_lat, side, side)

    def initial(self) -> InitialDelivery:
        frame = self._next_frame()
        if frame.kind != FrameKind.META:
            raise WireError("session must open with META")
        dims, mask = unpack_meta(frame.payload)
        if dims != self.cfg.dims or mask.block_side != self.cfg.block_side:
            raise WireError("transmitter geometry disagrees with session config")
        meta_bits = 8 * (HEADER.size + len(frame.payload))

        caption = None
        text_bits = 0
        frame = self._next_frame()
        if frame.kind == FrameKind.TEXT:
            symbols = unpack_symbols(frame.payload)
            n_chars = _derive_text_length(symbols.size, frame.pad_bits)
            caption = symbols_to_text(
                symbols, n_chars, frame.pad_bits, self.noise_var, self.soft
            )
            text_bits = coded_payload_bits(8 * n_chars)
            frame = self._next_frame()
        if frame.kind != FrameKind.LATENT:
            raise WireError("setup must end with the first LATENT frame")
        indices, blocks = self._decode_blocks(frame)
        per_block = self.cfg.dims.c_lat * self.cfg.block_side**2
        return InitialDelivery(
            caption=caption,
            mask=mask,
            indices=indices,
            blocks=blocks,
            latent_bits=coded_payload_bits(64 * per_block * len(indices)),
            text_bits=text_bits,
            meta_bits=meta_bits,
        )

    def request(self, indices: tuple[BlockIndex, ...]) -> BlockDelivery:
        req = encode_frame(Frame(FrameKind.REQ, 0, 0, pack_indices(indices)))
        self.endpoint.send_bytes(req)
        frame = self._next_frame()
        if frame.kind != FrameKind.LATENT:
            raise WireError("REQ must be answered by LATENT")
        got, blocks = self._decode_blocks(frame)
        per_block = self.cfg.dims.c_lat * self.cfg.block_side**2
        return BlockDelivery(
            indices=got,
            blocks=blocks,
            latent_bits=coded_payload_bits(64 * per_block * len(got)),
            meta_bits=8 * len(req),
        )

    def close(self) -> None:
        try:
            self.endpoint.send_bytes(encode_frame(Frame(FrameKind.FIN, 0, 0, b"")))
        finally:
            self.endpoint.close()


# --- entry points ------------------------------------------------------------


def run_end_to_end(
    image: np.ndarray,
    cfg: SessionConfig,
    suite: BackendSuite,
    channel: ChannelConfig,
    scheme: str = "main",
    replay: ReplaySchedule | None = None,
    transport: str = "memory",
    soft: bool = True,
) -> SessionResult:
    """Full link simulation for one image under one scheme.

    ``full_mask`` transmits no latent blocks at all and never retransmits;
    the receiver reconstructs from the caption alone. ``no_guidance`` omits
    the caption and replays a recorded request schedule.
    """
    if scheme == "full_mask":
        cfg = replace(cfg, q0=0.0, t_max=0)
    transmitter = Transmitter(
        image, cfg, suite, channel, send_caption=scheme != "no_guidance"
    )
    if transport == "memory":
        endpoint = MemoryEndpoint(transmitter)
    elif transport == "tcp":
        port, _ = serve_once(transmitter)
        endpoint = SocketEndpoint("127.0.0.1", port)
    else:
        raise ValueError(f"unknown transport: {transport!r}")
    link = FrameLink(endpoint, cfg, channel.noise_var, soft=soft)
    try:
        return drive_session(link, cfg, suite, scheme=scheme, replay=replay)
    finally:
        link.close()
