"""Backend bridge: codec known answers, golden transcripts, and a live
client/server conformance pass against an in-test stub server.

The files under tests/golden/ were packed by hand with struct, not with
this package, so they pin the wire layout independently of the code under
test. A sibling server implementation is expected to honor the same bytes.
"""

import socket
import struct
import threading
from pathlib import Path

import numpy as np
import pytest

from semlink.backends import ToyGaussianDenoiser, toy_suite
from semlink.blocks import TensorDims
from semlink.bridge import (
    HEADER,
    MAGIC,
    BridgeClient,
    BridgeError,
    BridgeUnavailable,
    Message,
    Metric,
    Op,
    Status,
    bridge_suite,
    encode_message,
    pack_denoise_request,
    pack_tensor,
    pack_text,
    parse_message_header,
    unpack_denoise_request,
    unpack_tensor,
    unpack_text,
)
from semlink.inpaint import DiffusionSchedule, run_inpainting

GOLDEN = Path(__file__).parent / "golden"
CAPTION = "a dark image with red top and blue bottom"


# --- atoms and framing --------------------------------------------------------


class TestCodec:
    def test_empty_probe_request_is_eight_known_bytes(self):
        blob = encode_message(Message(Op.PROBE, Status.REQUEST, b""))
        assert blob == b"SB\x00\x00\x00\x00\x00\x00"

    def test_header_fields_round_trip(self):
        blob = encode_message(Message(Op.SCORE, Status.UNAVAILABLE, b"xyz"))
        op, status, length = parse_message_header(blob[: HEADER.size])
        assert (op, status, length) == (Op.SCORE, Status.UNAVAILABLE, 3)

    def test_header_rejects_bad_magic_and_unknown_codes(self):
        with pytest.raises(BridgeError, match="magic"):
            parse_message_header(b"SL\x00\x00\x00\x00\x00\x00")
        with pytest.raises(BridgeError, match="unknown"):
            parse_message_header(b"SB\x09\x00\x00\x00\x00\x00")

    def test_tensor_atom_layout(self):
        blob = pack_tensor(np.array([[1.0, 2.0]]))
        assert blob[:9] == bytes([2]) + struct.pack("<II", 1, 2)
        assert blob[9:] == struct.pack("<dd", 1.0, 2.0)

    def test_tensor_round_trip_preserves_bits(self):
        rng = np.random.default_rng(5)
        arr = rng.normal(size=(3, 4, 5))
        out, offset = unpack_tensor(pack_tensor(arr))
        assert offset == 1 + 12 + arr.nbytes
        assert np.array_equal(out.view(np.uint64), arr.view(np.uint64))

    def test_scalar_packs_as_length_one_vector(self):
        out, _ = unpack_tensor(pack_tensor(np.float64(2.5)))
        assert out.shape == (1,) and out[0] == 2.5
        # a hand-packed rank-0 atom is still readable
        out, _ = unpack_tensor(bytes([0]) + struct.pack("<d", 2.5))
        assert out.shape == () and out == 2.5

    def test_tensor_truncation_raises(self):
        blob = pack_tensor(np.ones((2, 2)))
        for cut in (0, 5, len(blob) - 1):
            with pytest.raises(BridgeError, match="truncated"):
                unpack_tensor(blob[:cut])

    def test_text_atom_handles_unicode(self):
        text, offset = unpack_text(pack_text("café ☕"))
        assert text == "café ☕"
        assert offset == 4 + len("café ☕".encode())

    def test_denoise_request_round_trip(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(4, 8, 8))
        masked = np.where(rng.random((8, 8)) < 0.5, 0.0, z)
        mask = (rng.random((8, 8)) < 0.5).astype(float)
        blob = pack_denoise_request(41, 9.0, "two words", z, masked, mask)
        step, weight, caption, z2, m2, k2 = unpack_denoise_request(blob)
        assert (step, weight, caption) == (41, 9.0, "two words")
        assert np.array_equal(z2, z)
        assert np.array_equal(m2, masked)
        assert np.array_equal(k2, mask)

    def test_denoise_request_rejects_trailing_bytes(self):
        blob = pack_denoise_request(1, 0.0, "", np.ones(1), np.ones(1), np.ones(1))
        with pytest.raises(BridgeError, match="trailing"):
            unpack_denoise_request(blob + b"\x00")


# --- golden transcripts --------------------------------------------------------


def _load(name):
    blob = (GOLDEN / name).read_bytes()
    op, status, length = parse_message_header(blob[: HEADER.size])
    assert len(blob) == HEADER.size + length
    return Message(op, status, blob[HEADER.size :]), blob


class TestGoldenTranscripts:
    def test_probe_pair(self):
        req, blob = _load("probe_request.bin")
        assert req == Message(Op.PROBE, Status.REQUEST, b"")
        assert encode_message(req) == blob
        ok, blob = _load("probe_ok.bin")
        assert ok.payload[0] == 6
        assert [Op(b) for b in ok.payload[1:]] == list(Op)
        assert encode_message(ok) == blob

    def test_encode_pair(self):
        req, blob = _load("encode_request.bin")
        image, _ = unpack_tensor(req.payload)
        assert np.array_equal(image, [[[0.25, 0.5], [0.75, 1.0]]])
        assert encode_message(Message(Op.ENCODE, Status.REQUEST, pack_tensor(image))) == blob

        ok, blob = _load("encode_ok.bin")
        latent, _ = unpack_tensor(ok.payload)
        assert latent.shape == (4, 1, 1)
        assert np.array_equal(latent.ravel(), [0.5, 0.25, 0.125, 0.0625])
        assert encode_message(Message(Op.ENCODE, Status.OK, pack_tensor(latent))) == blob

    def test_denoise_request(self):
        req, blob = _load("denoise_request.bin")
        step, weight, caption, z, masked, mask = unpack_denoise_request(req.payload)
        assert (step, weight, caption) == (37, 9.0, CAPTION)
        assert np.array_equal(z, [[[0.1, -0.2], [0.3, -0.4]]])
        assert np.array_equal(masked, [[[0.0, 0.0], [0.3, -0.4]]])
        assert np.array_equal(mask, [[1.0, 1.0], [0.0, 0.0]])
        repacked = pack_denoise_request(step, weight, caption, z, masked, mask)
        assert encode_message(Message(Op.DENOISE, Status.REQUEST, repacked)) == blob

    def test_caption_ok_and_unavailable(self):
        ok, blob = _load("caption_ok.bin")
        assert unpack_text(ok.payload)[0] == CAPTION
        assert encode_message(Message(Op.CAPTION, Status.OK, pack_text(CAPTION))) == blob

        warn, blob = _load("caption_unavailable.bin")
        assert warn.status == Status.UNAVAILABLE
        assert unpack_text(warn.payload)[0] == "caption model not installed"
        assert encode_message(warn) == blob

    def test_score_pair(self):
        req, blob = _load("score_lpips_request.bin")
        assert req.payload[0] == Metric.LPIPS
        a, offset = unpack_tensor(req.payload, 1)
        b, end = unpack_tensor(req.payload, offset)
        assert end == len(req.payload)
        assert np.array_equal(a, b)
        repacked = bytes([Metric.LPIPS]) + pack_tensor(a) + pack_tensor(b)
        assert encode_message(Message(Op.SCORE, Status.REQUEST, repacked)) == blob

        ok, blob = _load("score_ok.bin")
        assert struct.unpack("<d", ok.payload) == (0.03125,)
        assert encode_message(ok) == blob


# --- live conformance against a stub server ------------------------------------

_DIMS = TensorDims(3, 64, 64, 4, 8, 8)


class _StubServer:
    """Single-connection server answering with the toy backends.

    SCORE supports LPIPS only (mean absolute difference stands in for a
    learned metric); FID and CLIP come back UNAVAILABLE so the degraded
    path gets exercised.
    """

    def __init__(self, schedule=None):
        self.suite = toy_suite(_DIMS, schedule)
        self._sock = socket.socket()
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(1)
        self.port = self._sock.getsockname()[1]
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _serve(self):
        conn, _ = self._sock.accept()
        with conn, self._sock:
            while True:
                header = self._read(conn, HEADER.size)
                if header is None:
                    return
                op, status, length = parse_message_header(header)
                payload = self._read(conn, length) if length else b""
                assert status == Status.REQUEST
                conn.sendall(encode_message(self._answer(op, payload)))

    @staticmethod
    def _read(conn, n):
        buf = b""
        while len(buf) < n:
            chunk = conn.recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return buf

    def _answer(self, op, payload):
        if op == Op.PROBE:
            ops = bytes(sorted(int(o) for o in Op))
            return Message(op, Status.OK, bytes([len(ops)]) + ops)
        if op == Op.ENCODE:
            image, _ = unpack_tensor(payload)
            return Message(op, Status.OK, pack_tensor(self.suite.encoder.encode(image)))
        if op == Op.DECODE:
            latent, _ = unpack_tensor(payload)
            return Message(op, Status.OK, pack_tensor(self.suite.decoder.decode(latent)))
        if op == Op.CAPTION:
            image, _ = unpack_tensor(payload)
            return Message(op, Status.OK, pack_text(self.suite.captioner.caption(image)))
        if op == Op.DENOISE:
            step, weight, caption, z, masked, mask = unpack_denoise_request(payload)
            eps = self.suite.denoiser.denoise(z, step, caption, weight, masked, mask)
            return Message(op, Status.OK, pack_tensor(eps))
        if op == Op.SCORE:
            metric = Metric(payload[0])
            if metric != Metric.LPIPS:
                detail = f"{metric.name.lower()} backend not loaded"
                return Message(op, Status.UNAVAILABLE, pack_text(detail))
            a, offset = unpack_tensor(payload, 1)
            b, _ = unpack_tensor(payload, offset)
            if a.shape != b.shape:
                return Message(op, Status.ERROR, pack_text("shape mismatch"))
            return Message(op, Status.OK, struct.pack("<d", float(np.mean(np.abs(a - b)))))
        return Message(op, Status.ERROR, pack_text("unhandled op"))


@pytest.fixture()
def stub():
    server = _StubServer()
    yield server
    server.thread.join(timeout=5)


class TestLiveBridge:
    def test_probe_reports_every_op(self, stub):
        with BridgeClient("127.0.0.1", stub.port) as client:
            assert client.probe() == frozenset(Op)

    def test_backend_calls_match_local_suite(self, stub):
        rng = np.random.default_rng(8)
        image = rng.random((3, 8, 8)).repeat(8, axis=1).repeat(8, axis=2)
        local = toy_suite(_DIMS)
        with BridgeClient("127.0.0.1", stub.port) as client:
            z = client.encode(image)
            assert np.array_equal(z, local.encoder.encode(image))
            assert np.array_equal(client.decode(z), local.decoder.decode(z))
            assert client.caption(image) == local.captioner.caption(image)

    def test_lpips_self_score_is_zero_and_others_degrade(self, stub):
        x = np.full((3, 4, 4), 0.5)
        with BridgeClient("127.0.0.1", stub.port) as client:
            assert client.lpips(x, x) == 0.0
            with pytest.raises(BridgeUnavailable, match="fid"):
                client.fid(x[None], x[None])

    def test_shape_mismatch_surfaces_as_error(self, stub):
        with BridgeClient("127.0.0.1", stub.port) as client:
            with pytest.raises(BridgeError, match="shape mismatch"):
                client.lpips(np.ones((3, 2, 2)), np.ones((3, 4, 4)))

    def test_bridged_denoiser_reproduces_local_inpainting(self):
        # both endpoints must run the same noise ladder; the wire only
        # carries the step index
        schedule = DiffusionSchedule.default(n_steps=10)
        stub = _StubServer(schedule)
        rng = np.random.default_rng(9)
        z = rng.normal(size=(4, 8, 8))
        mask = (rng.random((8, 8)) < 0.4).astype(np.uint8)
        z_rx = np.where(mask.astype(bool)[None], 0.0, z)

        local = run_inpainting(
            z_rx, mask, CAPTION, 9.0, 1.0, schedule, ToyGaussianDenoiser(schedule)
        )
        suite, client = bridge_suite("127.0.0.1", stub.port, _DIMS, schedule)
        remote = run_inpainting(z_rx, mask, CAPTION, 9.0, 1.0, schedule, suite.denoiser)
        client.close()
        stub.thread.join(timeout=5)
        assert np.array_equal(remote.view(np.uint64), local.view(np.uint64))
