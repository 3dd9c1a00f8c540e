"""Threaded TCP server answering link-client requests.

One connection can issue any number of requests; the reply always
mirrors the request op. Handler errors never kill the connection: a
CapabilityMissing becomes an UNAVAILABLE reply, anything else becomes
ERROR with the exception text, and only a protocol violation (garbage
header) drops the socket.
"""

from __future__ import annotations

import argparse
import logging
import socketserver
import threading

import numpy as np

from .models import CapabilityMissing, ModelHub
from .proto import (
    Metric,
    Op,
    ProtocolError,
    Reader,
    Status,
    Writer,
    pack_frame,
    read_frame,
)

log = logging.getLogger("sdbridge")


def answer(hub: ModelHub, op: Op, payload: bytes) -> bytes:
    try:
        body = _dispatch(hub, op, payload)
        return pack_frame(op, Status.OK, body)
    except CapabilityMissing as exc:
        log.info("%s unavailable: %s", op.name, exc)
        return pack_frame(op, Status.UNAVAILABLE, Writer().text(str(exc)).blob())
    except Exception as exc:  # noqa: BLE001 - reported to the peer
        log.warning("%s failed: %s", op.name, exc)
        return pack_frame(op, Status.ERROR, Writer().text(f"{type(exc).__name__}: {exc}").blob())


def _dispatch(hub: ModelHub, op: Op, payload: bytes) -> bytes:
    reader = Reader(payload)
    if op == Op.PROBE:
        reader.done()
        ops = hub.supported_ops()
        out = Writer().u8(len(ops))
        for supported in ops:
            out.u8(int(supported))
        return out.blob()
    if op in (Op.ENCODE, Op.DECODE, Op.CAPTION):
        image = reader.tensor()
        reader.done()
        if op == Op.ENCODE:
            return Writer().tensor(hub.encode(image)).blob()
        if op == Op.DECODE:
            return Writer().tensor(hub.decode(image)).blob()
        return Writer().text(hub.caption(image)).blob()
    if op == Op.DENOISE:
        step = reader.u32()
        weight = reader.f64()
        caption = reader.text()
        z = reader.tensor()
        masked = reader.tensor()
        mask = reader.tensor()
        reader.done()
        eps = hub.denoise(step, weight, caption, z, masked, mask)
        return Writer().tensor(np.asarray(eps)).blob()
    if op == Op.SCORE:
        metric = Metric(reader.u8())
        if metric == Metric.CLIP:
            parts = (reader.tensor(), reader.text())
        else:
            parts = (reader.tensor(), reader.tensor())
        reader.done()
        return Writer().f64(hub.score(metric, parts)).blob()
    raise ValueError(f"op {op} not implemented")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        peer = self.client_address
        log.debug("connection from %s", peer)
        while True:
            try:
                frame = read_frame(self.rfile)
            except ProtocolError as exc:
                log.warning("dropping %s: %s", peer, exc)
                return
            if frame is None:
                return
            op, status, payload = frame
            if status != Status.REQUEST:
                log.warning("dropping %s: non-request status %s", peer, status)
                return
            self.wfile.write(answer(self.server.hub, op, payload))
            self.wfile.flush()


class BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], hub: ModelHub):
        super().__init__(address, _Handler)
        self.hub = hub

    @property
    def port(self) -> int:
        return self.server_address[1]


def start_background(hub: ModelHub, host: str = "127.0.0.1", port: int = 0):
    """Server on a daemon thread; returns (server, thread). Callers own
    shutdown()."""
    server = BridgeServer((host, port), hub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


def main() -> int:
    parser = argparse.ArgumentParser(description="serve model backends over TCP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8641)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    hub = ModelHub(device=args.device)
    log.info("capabilities: %s", ", ".join(op.name for op in hub.supported_ops()))
    with BridgeServer((args.host, args.port), hub) as server:
        log.info("listening on %s:%d", args.host, server.port)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            log.info("shutting down")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
