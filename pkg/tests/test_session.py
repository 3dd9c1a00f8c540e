"""Framing, the transmitter, and whole-link behavior over both transports."""

import numpy as np
import pytest

from semlink.backends import toy_suite
from semlink.blocks import BlockMask, TensorDims
from semlink.control import ReplaySchedule, SessionConfig
from semlink.phy import ChannelConfig
from semlink.session import (
    FrameLink,
    MemoryEndpoint,
    SocketEndpoint,
    Transmitter,
    run_end_to_end,
    serve_once,
)
from semlink.wire import (
    Frame,
    FrameKind,
    WireError,
    decode_frame,
    encode_frame,
    pack_indices,
    pack_meta,
    unpack_indices,
    unpack_latent,
    unpack_meta,
)

DIMS = TensorDims(3, 128, 128, 4, 16, 16)


def corpus_image():
    img = np.zeros(DIMS.image_shape)
    img[0, :64, :] = 0.45
    img[2, 64:, :] = 0.45
    return img


def session_fixtures(tau=0.9, seed=42, snr=10.0):
    suite = toy_suite(DIMS)
    cfg = SessionConfig(tau=tau, snr_db=snr, block_side=2, seed=seed, dims=DIMS)
    channel = ChannelConfig(snr_db=snr, seed=seed + 1)
    return corpus_image(), cfg, suite, channel


class TestFrameCodec:
    def test_header_round_trip(self):
        frame = Frame(FrameKind.REQ, 3, 0, pack_indices(((1, 2), (4, 5))))
        out = decode_frame(encode_frame(frame))
        assert out == frame

    def test_known_header_bytes(self):
        # magic "SL", kind REQ=4, round 3, length 1, pad 7 -> frozen layout
        raw = encode_frame(Frame(FrameKind.REQ, 3, 7, b"\x00"))
        assert raw == b"SL\x04\x03\x00\x01\x00\x00\x00\x07\x00"

    def test_known_meta_bytes(self):
        dims = TensorDims(3, 16, 16, 4, 2, 2)
        mask = BlockMask(np.array([[1, 0], [0, 1]], dtype=np.uint8), 1)
        payload = pack_meta(dims, mask)
        expect = (
            b"\x03\x00\x00\x00\x10\x00\x00\x00\x10\x00\x00\x00"
            b"\x04\x00\x00\x00\x02\x00\x00\x00\x02\x00\x00\x00"
            b"\x01\x00"  # block side 1
            b"\x90"  # bits 1001 packed MSB-first
        )
        assert payload == expect
        dims2, mask2 = unpack_meta(payload)
        assert dims2 == dims
        np.testing.assert_array_equal(mask2.grid, mask.grid)

    def test_bad_magic_rejected(self):
        with pytest.raises(WireError):
            decode_frame(b"XX\x01\x00\x00\x00\x00\x00\x00\x00")

    def test_unknown_kind_rejected(self):
        with pytest.raises(WireError):
            decode_frame(b"SL\x09\x00\x00\x00\x00\x00\x00\x00")

    def test_truncated_payload_rejected(self):
        frame = encode_frame(Frame(FrameKind.TEXT, 0, 0, b"abcd"))
        with pytest.raises(WireError):
            decode_frame(frame[:-1])

    def test_indices_round_trip(self):
        indices = ((0, 0), (15, 15), (7, 3))
        out, consumed = unpack_indices(pack_indices(indices))
        assert out == indices
        assert consumed == 4 + 4 * len(indices)


class TestTransmitter:
    def test_initial_frames_in_order(self):
        image, cfg, suite, channel = session_fixtures()
        tx = Transmitter(image, cfg, suite, channel)
        frames = [decode_frame(raw) for raw in tx.initial_frames()]
        assert [f.kind for f in frames] == [FrameKind.META, FrameKind.TEXT, FrameKind.LATENT]

    def test_caption_suppressed(self):
        image, cfg, suite, channel = session_fixtures()
        tx = Transmitter(image, cfg, suite, channel, send_caption=False)
        frames = [decode_frame(raw) for raw in tx.initial_frames()]
        assert [f.kind for f in frames] == [FrameKind.META, FrameKind.LATENT]

    def test_rejects_duplicate_serving(self):
        image, cfg, suite, channel = session_fixtures()
        tx = Transmitter(image, cfg, suite, channel)
        meta = decode_frame(tx.initial_frames()[0])
        _, mask = unpack_meta(meta.payload)
        withheld = tuple(sorted(zip(*np.nonzero(mask.grid))))
        first = withheld[:2]
        req = encode_frame(Frame(FrameKind.REQ, 1, 0, pack_indices(first)))
        tx.serve(req)
        with pytest.raises(WireError):
            tx.serve(req)

    def test_rejects_transmitted_block_request(self):
        image, cfg, suite, channel = session_fixtures()
        tx = Transmitter(image, cfg, suite, channel)
        meta = decode_frame(tx.initial_frames()[0])
        _, mask = unpack_meta(meta.payload)
        sent = tuple(sorted(zip(*np.nonzero(mask.grid == 0))))
        req = encode_frame(Frame(FrameKind.REQ, 1, 0, pack_indices(sent[:1])))
        with pytest.raises(WireError):
            tx.serve(req)

    def test_latent_frame_indices_match_request(self):
        image, cfg, suite, channel = session_fixtures()
        tx = Transmitter(image, cfg, suite, channel)
        tx.initial_frames()
        withheld = tuple(sorted(zip(*np.nonzero(tx.mask0.grid))))
        want = withheld[:3]
        reply = decode_frame(tx.serve(encode_frame(Frame(FrameKind.REQ, 1, 0, pack_indices(want)))))
        got, symbols = unpack_latent(reply.payload)
        assert got == want
        assert symbols.size > 0


class TestWholeLink:
    def test_high_snr_session_reaches_threshold(self):
        image, cfg, suite, channel = session_fixtures(tau=0.9, snr=12.0)
        result = run_end_to_end(image, cfg, suite, channel)
        assert result.terminated_by in ("threshold", "exhausted")
        assert result.caption_received is not None

    def test_deterministic_given_seeds(self):
        image, cfg, suite, channel = session_fixtures()
        a = run_end_to_end(image, cfg, suite, channel)
        b = run_end_to_end(image, cfg, suite, channel)
        assert np.array_equal(a.image, b.image)
        assert a.rounds == b.rounds
        assert a.latent_bits == b.latent_bits

    def test_tcp_and_memory_agree(self):
        image, cfg, suite, channel = session_fixtures()
        mem = run_end_to_end(image, cfg, suite, channel, transport="memory")
        tcp = run_end_to_end(image, cfg, suite, channel, transport="tcp")
        assert np.array_equal(mem.image, tcp.image)
        assert mem.rounds == tcp.rounds

    def test_socket_endpoint_partial_reads(self):
        image, cfg, suite, channel = session_fixtures()
        tx = Transmitter(image, cfg, suite, channel)
        port, thread = serve_once(tx)
        endpoint = SocketEndpoint("127.0.0.1", port)
        link = FrameLink(endpoint, cfg, channel.noise_var)
        init = link.initial()
        assert init.caption is not None
        link.close()
        thread.join(timeout=5)

    def test_paired_latent_noise_without_caption(self):
        # Omitting the TEXT frame must not shift the latent noise stream:
        # the first LATENT frame is symbol-identical across the two runs.
        image, cfg, suite, channel = session_fixtures()
        with_text = Transmitter(image, cfg, suite, channel).initial_frames()[-1]
        without = Transmitter(image, cfg, suite, channel, send_caption=False).initial_frames()[-1]
        assert with_text == without

    def test_full_mask_scheme_sends_no_blocks(self):
        image, cfg, suite, channel = session_fixtures()
        result = run_end_to_end(image, cfg, suite, channel, scheme="full_mask")
        assert result.q == 0.0
        assert result.latent_bits == 0
        assert result.t_final == 0

    def test_no_guidance_replay_matches_main_coverage(self):
        image, cfg, suite, channel = session_fixtures(tau=0.99)
        main = run_end_to_end(image, cfg, suite, channel)
        replay = ReplaySchedule.from_rounds(main.rounds)
        ng = run_end_to_end(image, cfg, suite, channel, scheme="no_guidance", replay=replay)
        assert ng.q == main.q
        assert ng.t_final == main.t_final
        assert ng.caption_received is None
        assert ng.text_bits == 0

    def test_bit_accounting_matches_geometry(self):
        image, cfg, suite, channel = session_fixtures(tau=0.99)
        result = run_end_to_end(image, cfg, suite, channel)
        per_block = 2 * 64 * DIMS.c_lat * cfg.block_side**2
        blocks_sent = round(result.q * cfg.n_blocks)
        assert result.latent_bits == per_block * blocks_sent

    def test_memory_endpoint_underflow(self):
        image, cfg, suite, channel = session_fixtures()
        endpoint = MemoryEndpoint(Transmitter(image, cfg, suite, channel))
        with pytest.raises(WireError):
            endpoint.recv_bytes(10**6)

    def test_geometry_mismatch_detected(self):
        image, cfg, suite, channel = session_fixtures()
        other = SessionConfig(
            tau=0.9, snr_db=10.0, block_side=4, seed=42, dims=DIMS
        )
        endpoint = MemoryEndpoint(Transmitter(image, cfg, suite, channel))
        link = FrameLink(endpoint, other, channel.noise_var)
        with pytest.raises(WireError):
            link.initial()
