import math

import pytest
from hypothesis import given, settings, strategies as st

from udsim.isotp import (
    EmptyPayload,
    FlowControlParams,
    FlowStatus,
    NBsTimeout,
    NCrTimeout,
    PayloadTooLarge,
    Reassembler,
    ReservedStMin,
    RxComplete,
    RxDiscard,
    RxNeedFlowControl,
    TpEndpoint,
    TpTimers,
    TxTransfer,
    UnexpectedPci,
    WaitLimitExceeded,
    WrongSequenceNumber,
    frame_count,
    make_flow_control,
    segment,
    stmin_duration,
)
from udsim.canbus import CanId

MS = 1_000_000


def brute_force_frame_count(length: int) -> int:
    """Independent oracle: count frames by walking the payload."""
    if length <= 7:
        return 1
    frames = 1  # first frame carries 6 bytes
    remaining = length - 6
    while remaining > 0:
        frames += 1
        remaining -= 7
    return frames


def reassemble_all(frames, timers=TpTimers()):
    r = Reassembler(timers)
    t = 0
    for f in frames:
        ev = r.feed(f, t)
        t += MS
    assert isinstance(ev, RxComplete)
    return ev.payload


class TestSegment:
    def test_tester_present_single_frame(self):
        assert segment(bytes([0x3E, 0x00])) == [
            bytes([0x02, 0x3E, 0x00, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA])
        ]

    def test_ten_byte_payload(self):
        payload = bytes(range(10))
        frames = segment(payload, pad=0xCC)
        assert frames[0] == bytes([0x10, 0x0A]) + payload[:6]
        assert frames[1] == bytes([0x21]) + payload[6:] + bytes([0xCC] * 3)

    def test_empty(self):
        with pytest.raises(EmptyPayload):
            segment(b"")

    def test_too_large(self):
        with pytest.raises(PayloadTooLarge):
            segment(b"\x00" * 4096)

    def test_max_size_ok(self):
        frames = segment(b"\x55" * 4095)
        assert len(frames) == frame_count(4095)

    def test_all_frames_padded_to_eight(self):
        for length in (1, 7, 8, 20, 4095):
            for f in segment(b"\x11" * length):
                assert len(f) == 8

    def test_sequence_numbers_wrap(self):
        frames = segment(b"\x00" * 200)
        sns = [f[0] & 0x0F for f in frames[1:]]
        assert sns[:16] == list(range(1, 16)) + [0]


class TestFlowControl:
    def test_cts(self):
        fc = make_flow_control(FlowControlParams(FlowStatus.CONTINUE_TO_SEND, 0, 0x00))
        assert fc[:3] == bytes([0x30, 0x00, 0x00])

    def test_wait(self):
        fc = make_flow_control(FlowControlParams(FlowStatus.WAIT, 4, 0x14))
        assert fc[:3] == bytes([0x31, 0x04, 0x14])

    def test_reserved_stmin_rejected(self):
        with pytest.raises(ReservedStMin):
            make_flow_control(FlowControlParams(FlowStatus.CONTINUE_TO_SEND, 0, 0x80))


class TestStmin:
    @pytest.mark.parametrize(
        "raw,ns",
        [(0x00, 0), (0x7F, 127 * MS), (0xF1, 100_000), (0xF3, 300_000), (0xF9, 900_000)],
    )
    def test_values(self, raw, ns):
        assert stmin_duration(raw) == ns

    @pytest.mark.parametrize("raw", [0x80, 0xF0, 0xFA, 0xFF])
    def test_reserved(self, raw):
        with pytest.raises(ReservedStMin):
            stmin_duration(raw)


class TestReassembler:
    def test_single_frame_completes(self):
        r = Reassembler()
        ev = r.feed(bytes([0x02, 0x10, 0x03, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA]), 0)
        assert ev == RxComplete(bytes([0x10, 0x03]))

    def test_first_frame_asks_for_flow_control(self):
        r = Reassembler()
        ev = r.feed(segment(bytes(range(10)))[0], 0)
        assert ev == RxNeedFlowControl(10)

    def test_wrong_sequence_number(self):
        r = Reassembler()
        r.feed(segment(bytes(range(10)))[0], 0)
        bad_cf = bytes([0x22]) + bytes(4) + b"\xaa\xaa\xaa"
        with pytest.raises(WrongSequenceNumber):
            r.feed(bad_cf, 0)
        assert not r.in_progress

    def test_n_cr_timeout(self):
        timers = TpTimers(n_cr_ms=1000)
        r = Reassembler(timers)
        r.feed(segment(bytes(range(10)))[0], 0)
        r.check_timeout(1000 * MS)  # exactly at the deadline: still fine
        with pytest.raises(NCrTimeout):
            r.check_timeout(1001 * MS)

    def test_cf_without_ff(self):
        with pytest.raises(UnexpectedPci):
            Reassembler().feed(bytes([0x21] + [0] * 7), 0)

    def test_new_ff_aborts_previous(self):
        r = Reassembler()
        r.feed(segment(b"\x01" * 10)[0], 0)
        frames = segment(b"\x02" * 10)
        r.feed(frames[0], 0)
        ev = r.feed(frames[1], 0)
        assert ev == RxComplete(b"\x02" * 10)

    def test_short_single_frame_discarded(self):
        ev = Reassembler().feed(bytes([0x05, 0x3E]), 0)
        assert isinstance(ev, RxDiscard)

    def test_zero_length_single_frame_discarded(self):
        ev = Reassembler().feed(bytes([0x00] * 8), 0)
        assert isinstance(ev, RxDiscard)


class TestTxTransfer:
    def test_single_frame_immediate(self):
        tx = TxTransfer(b"\x3e\x00", 0xAA, TpTimers(), 0)
        assert tx.poll(0) == segment(b"\x3e\x00")
        assert tx.done

    def test_waits_for_flow_control(self):
        tx = TxTransfer(bytes(range(20)), 0xAA, TpTimers(), 0)
        first = tx.poll(0)
        assert len(first) == 1 and first[0][0] >> 4 == 1
        assert tx.poll(0) == []  # blocked until FC
        tx.on_flow_control(FlowControlParams(), 0)
        rest = tx.poll(0)
        assert [f[0] for f in rest] == [0x21, 0x22]
        assert tx.done

    def test_block_size_honored(self):
        tx = TxTransfer(bytes(100), 0xAA, TpTimers(), 0)
        tx.poll(0)
        tx.on_flow_control(FlowControlParams(block_size=2), 0)
        assert len(tx.poll(0)) == 2
        assert tx.poll(0) == []  # block exhausted, awaiting next FC
        tx.on_flow_control(FlowControlParams(block_size=0), 0)
        sent = tx.poll(0)
        assert tx.done and len(sent) == frame_count(100) - 3

    def test_stmin_paces_consecutive_frames(self):
        tx = TxTransfer(bytes(30), 0xAA, TpTimers(), 0)
        tx.poll(0)
        tx.on_flow_control(FlowControlParams(stmin_raw=0x05), 0)
        assert len(tx.poll(0)) == 1
        assert tx.poll(2 * MS) == []  # 2 ms < 5 ms gap
        assert len(tx.poll(5 * MS)) == 1

    def test_overflow_aborts(self):
        tx = TxTransfer(bytes(20), 0xAA, TpTimers(), 0)
        tx.poll(0)
        with pytest.raises(Exception):
            tx.on_flow_control(FlowControlParams(FlowStatus.OVERFLOW), 0)

    def test_wait_limit(self):
        tx = TxTransfer(bytes(20), 0xAA, TpTimers(), 0)
        tx.poll(0)
        for _ in range(3):
            tx.on_flow_control(FlowControlParams(FlowStatus.WAIT), 0)
        with pytest.raises(WaitLimitExceeded):
            tx.on_flow_control(FlowControlParams(FlowStatus.WAIT), 0)

    def test_n_bs_timeout(self):
        tx = TxTransfer(bytes(20), 0xAA, TpTimers(n_bs_ms=1000), 0)
        tx.poll(0)
        with pytest.raises(NBsTimeout):
            tx.poll(1001 * MS)


class TestEndpoint:
    def test_ids_must_differ(self):
        with pytest.raises(Exception):
            TpEndpoint(CanId(0x7E0), CanId(0x7E0))


class TestRoundTrip:
    @given(st.binary(min_size=1, max_size=4095))
    @settings(max_examples=200, deadline=None)
    def test_random_payloads(self, payload):
        assert reassemble_all(segment(payload)) == payload

    def test_frame_count_formula_matches_brute_force(self):
        for length in range(1, 4096):
            expected = brute_force_frame_count(length)
            assert frame_count(length) == expected
            assert expected == (1 if length <= 7 else 1 + math.ceil((length - 6) / 7))

    def test_exhaustive_lengths_sampled(self):
        for length in list(range(1, 64)) + [100, 1000, 4094, 4095]:
            payload = bytes(i & 0xFF for i in range(length))
            frames = segment(payload)
            assert len(frames) == frame_count(length)
            assert reassemble_all(frames) == payload
