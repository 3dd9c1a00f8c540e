"""Codec round trips plus golden byte transcripts.

The golden files were packed by hand with struct (the link-side repo
carries identical copies), so both protocol implementations are pinned
to the same bytes rather than to each other.
"""

import struct
from pathlib import Path

import numpy as np
import pytest

from sdbridge.proto import (
    HEADER_SIZE,
    Metric,
    Op,
    ProtocolError,
    Reader,
    Status,
    Writer,
    pack_frame,
    split_header,
)

GOLDEN = Path(__file__).parent / "golden"
CAPTION = "a dark image with red top and blue bottom"


class TestFraming:
    def test_probe_request_bytes(self):
        assert pack_frame(Op.PROBE, Status.REQUEST) == b"SB\x00\x00\x00\x00\x00\x00"

    def test_header_round_trip(self):
        blob = pack_frame(Op.DENOISE, Status.OK, b"abc")
        assert split_header(blob[:HEADER_SIZE]) == (Op.DENOISE, Status.OK, 3)

    def test_bad_magic_rejected(self):
        with pytest.raises(ProtocolError, match="magic"):
            split_header(b"XX\x00\x00\x00\x00\x00\x00")

    def test_unknown_op_rejected(self):
        with pytest.raises(ProtocolError):
            split_header(b"SB\x2a\x00\x00\x00\x00\x00")

    def test_wrong_header_size_rejected(self):
        with pytest.raises(ProtocolError, match="8 header bytes"):
            split_header(b"SB\x00")


class TestAtoms:
    def test_scalar_atoms(self):
        payload = Writer().u8(7).u32(1 << 20).f64(-2.5).blob()
        reader = Reader(payload)
        assert reader.u8() == 7
        assert reader.u32() == 1 << 20
        assert reader.f64() == -2.5
        reader.done()

    def test_text_round_trip(self):
        reader = Reader(Writer().text("grüße ☀").blob())
        assert reader.text() == "grüße ☀"
        reader.done()

    def test_tensor_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(1)
        arr = rng.normal(size=(2, 3, 4))
        out = Reader(Writer().tensor(arr).blob()).tensor()
        assert np.array_equal(out.view(np.uint64), arr.view(np.uint64))

    def test_tensor_layout_matches_documented_bytes(self):
        blob = Writer().tensor(np.array([[1.0, 2.0]])).blob()
        assert blob[:9] == bytes([2]) + struct.pack("<II", 1, 2)
        assert blob[9:] == struct.pack("<dd", 1.0, 2.0)

    def test_truncated_payload_raises(self):
        blob = Writer().tensor(np.ones((2, 2))).blob()
        for cut in (0, 3, len(blob) - 1):
            with pytest.raises(ProtocolError, match="truncated"):
                Reader(blob[:cut]).tensor()

    def test_leftover_bytes_detected(self):
        reader = Reader(Writer().u8(1).u8(2).blob())
        reader.u8()
        with pytest.raises(ProtocolError, match="unread"):
            reader.done()


def _load(name):
    blob = (GOLDEN / name).read_bytes()
    op, status, length = split_header(blob[:HEADER_SIZE])
    assert len(blob) == HEADER_SIZE + length
    return op, status, blob[HEADER_SIZE:], blob


class TestGoldenTranscripts:
    def test_probe_pair(self):
        op, status, payload, blob = _load("probe_request.bin")
        assert (op, status, payload) == (Op.PROBE, Status.REQUEST, b"")
        assert pack_frame(op, status) == blob

        op, status, payload, blob = _load("probe_ok.bin")
        reader = Reader(payload)
        count = reader.u8()
        ops = [Op(reader.u8()) for _ in range(count)]
        reader.done()
        assert ops == list(Op)
        out = Writer().u8(count)
        for supported in ops:
            out.u8(int(supported))
        assert pack_frame(op, status, out.blob()) == blob

    def test_encode_pair(self):
        op, status, payload, blob = _load("encode_request.bin")
        image = Reader(payload).tensor()
        assert np.array_equal(image, [[[0.25, 0.5], [0.75, 1.0]]])
        assert pack_frame(op, status, Writer().tensor(image).blob()) == blob

        op, status, payload, blob = _load("encode_ok.bin")
        latent = Reader(payload).tensor()
        assert latent.shape == (4, 1, 1)
        assert pack_frame(op, status, Writer().tensor(latent).blob()) == blob

    def test_denoise_request(self):
        op, status, payload, blob = _load("denoise_request.bin")
        reader = Reader(payload)
        assert reader.u32() == 37
        assert reader.f64() == 9.0
        assert reader.text() == CAPTION
        z = reader.tensor()
        masked = reader.tensor()
        mask = reader.tensor()
        reader.done()
        assert np.array_equal(z, [[[0.1, -0.2], [0.3, -0.4]]])
        assert np.array_equal(masked, [[[0.0, 0.0], [0.3, -0.4]]])
        assert np.array_equal(mask, [[1.0, 1.0], [0.0, 0.0]])
        repacked = (
            Writer().u32(37).f64(9.0).text(CAPTION)
            .tensor(z).tensor(masked).tensor(mask).blob()
        )
        assert pack_frame(op, status, repacked) == blob

    def test_caption_ok_and_unavailable(self):
        op, status, payload, blob = _load("caption_ok.bin")
        assert (op, status) == (Op.CAPTION, Status.OK)
        assert Reader(payload).text() == CAPTION
        assert pack_frame(op, status, Writer().text(CAPTION).blob()) == blob

        op, status, payload, _ = _load("caption_unavailable.bin")
        assert (op, status) == (Op.CAPTION, Status.UNAVAILABLE)
        assert Reader(payload).text() == "caption model not installed"

    def test_score_pair(self):
        op, status, payload, blob = _load("score_lpips_request.bin")
        reader = Reader(payload)
        assert Metric(reader.u8()) == Metric.LPIPS
        a = reader.tensor()
        b = reader.tensor()
        reader.done()
        assert np.array_equal(a, b)
        repacked = Writer().u8(int(Metric.LPIPS)).tensor(a).tensor(b).blob()
        assert pack_frame(op, status, repacked) == blob

        op, status, payload, blob = _load("score_ok.bin")
        assert Reader(payload).f64() == 0.03125
        assert pack_frame(op, status, Writer().f64(0.03125).blob()) == blob
