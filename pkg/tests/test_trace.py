import csv
import hashlib
import json

import pytest

from udsim.canbus import CanFrame, CanId
from udsim.trace import (
    DIR_ECU_TO_TESTER,
    DIR_OTHER,
    DIR_TESTER_TO_ECU,
    ChannelSet,
    CycleDetected,
    EmptyRecording,
    MissingInput,
    NeverFired,
    NonMonotonicTimestamp,
    Recording,
    capture,
    describe_frame,
)

MS = 1_000_000


def frame(data=b"\x00", can_id=0x7E0):
    return CanFrame(CanId(can_id), data)


def filled(n, capacity=1_000_000, step_ns=MS):
    rec = Recording(capacity)
    for i in range(n):
        rec.append(i * step_ns, DIR_OTHER, frame(bytes([i & 0xFF])))
    return rec


class TestRecording:
    def test_append_and_len(self):
        rec = filled(10)
        assert len(rec) == 10
        assert [r.seq for r in rec.records()] == list(range(10))

    def test_equal_timestamps_allowed(self):
        rec = Recording()
        rec.append(5, DIR_OTHER, frame())
        rec.append(5, DIR_OTHER, frame())

    def test_non_monotonic_rejected(self):
        rec = Recording()
        rec.append(5, DIR_OTHER, frame())
        with pytest.raises(NonMonotonicTimestamp):
            rec.append(4, DIR_OTHER, frame())

    def test_ring_evicts_oldest(self):
        rec = filled(10, capacity=4)
        seqs = [r.seq for r in rec.records()]
        assert seqs == [6, 7, 8, 9]

    def test_seq_keeps_counting_past_eviction(self):
        rec = filled(10, capacity=4)
        rec.append(100 * MS, DIR_OTHER, frame())
        assert rec.records()[-1].seq == 10


class TestCapture:
    def test_window_is_closed_interval(self):
        rec = filled(1000)  # 1 record per ms at t = 0..999 ms
        trigger = lambda r: r.t_ns == 500 * MS
        window = capture(rec, trigger, pre_ms=100, post_ms=250)
        ts = [r.t_ns for r in window]
        assert ts[0] == 400 * MS and ts[-1] == 750 * MS
        assert len(window) == 351  # both boundary records included

    def test_matches_independent_filter(self):
        rec = filled(300)
        window = capture(rec, lambda r: r.seq == 120, 30, 70)
        oracle = [r for r in rec.records() if 90 * MS <= r.t_ns <= 190 * MS]
        assert window == oracle

    def test_first_match_wins(self):
        rec = filled(100)
        window = capture(rec, lambda r: r.t_ns >= 10 * MS, 0, 0)
        assert [r.t_ns for r in window] == [10 * MS]

    def test_never_fired(self):
        with pytest.raises(NeverFired):
            capture(filled(5), lambda r: False, 1, 1)

    def test_negative_window_rejected(self):
        with pytest.raises(Exception):
            capture(filled(5), lambda r: True, -1, 0)


class TestExport:
    def test_csv_columns_and_rows(self, tmp_path):
        rec = filled(25)
        out = tmp_path / "t.csv"
        rec.export("csv", out)
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 25
        assert list(rows[0]) == Recording.CSV_COLUMNS
        assert rows[3]["t_ns"] == str(3 * MS)
        assert rows[3]["data_hex"] == "03"

    def test_jsonl_round_trip(self, tmp_path):
        rec = filled(5)
        out = tmp_path / "t.jsonl"
        rec.export("jsonl", out)
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert [r["seq"] for r in rows] == list(range(5))

    def test_empty_recording(self, tmp_path):
        with pytest.raises(EmptyRecording):
            Recording().export("csv", tmp_path / "x.csv")

    def test_export_deterministic(self, tmp_path):
        def digest(path):
            return hashlib.sha256(path.read_bytes()).hexdigest()

        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        filled(50).export("csv", a)
        filled(50).export("csv", b)
        assert digest(a) == digest(b)


class TestChannels:
    def make(self):
        ch = ChannelSet()
        ch.define_sampled("voltage", unit="V")
        ch.define_sampled("current", unit="A")
        ch.define_computed("power", "product", ["voltage", "current"], unit="W")
        return ch

    def test_product(self):
        ch = self.make()
        ch.add_sample("voltage", 0, 400.0)
        ch.add_sample("current", 0, 2.5)
        assert ch.eval_computed("power", 0) == 1000.0

    def test_latest_at_or_before(self):
        ch = self.make()
        ch.add_sample("voltage", 0, 400.0)
        ch.add_sample("voltage", 10 * MS, 390.0)
        ch.add_sample("current", 5 * MS, 2.0)
        # at t=7ms: voltage holds its t=0 sample, current its t=5ms sample
        assert ch.eval_computed("power", 7 * MS) == 800.0
        assert ch.eval_computed("power", 10 * MS) == 780.0

    def test_missing_input(self):
        ch = self.make()
        ch.add_sample("voltage", 5 * MS, 400.0)
        with pytest.raises(MissingInput):
            ch.eval_computed("power", 0)

    def test_scale_and_sum(self):
        ch = ChannelSet()
        ch.define_sampled("a")
        ch.define_sampled("b")
        ch.define_computed("total", "sum", ["a", "b"])
        ch.define_computed("kilo", "scale", ["total"], factor=0.001)
        ch.add_sample("a", 0, 1500.0)
        ch.add_sample("b", 0, 500.0)
        assert ch.eval_computed("total", 0) == 2000.0
        assert ch.eval_computed("kilo", 0) == 2.0

    def test_cycle_rejected_at_definition(self):
        ch = ChannelSet()
        ch.define_sampled("x")
        ch.define_computed("a", "scale", ["x"])
        ch.define_computed("b", "scale", ["a"])
        with pytest.raises(CycleDetected):
            ch.define_computed("a", "scale", ["b"])

    def test_self_cycle_rejected(self):
        ch = ChannelSet()
        with pytest.raises(CycleDetected):
            ch.define_computed("loop", "scale", ["loop"])


class TestDescribeFrame:
    def test_single_frame_request(self):
        kind, text = describe_frame(
            frame(bytes([0x02, 0x3E, 0x00, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA])),
            DIR_TESTER_TO_ECU,
        )
        assert kind == "request"
        assert "TesterPresent" in text

    def test_negative_response(self):
        kind, text = describe_frame(
            frame(bytes([0x03, 0x7F, 0x27, 0x35, 0xAA, 0xAA, 0xAA, 0xAA]), 0x7E8),
            DIR_ECU_TO_TESTER,
        )
        assert "negative" in text and "invalidKey" in text

    def test_dtc_response_formats_code(self):
        payload = bytes([0x59, 0x0A, 0x09, 0x01, 0x23, 0x45, 0x09])
        kind, text = describe_frame(
            frame(bytes([len(payload)]) + payload + b"\xaa" * (7 - len(payload)), 0x7E8)
            if len(payload) <= 7
            else None,
            DIR_ECU_TO_TESTER,
        )
        assert "P0123-45" in text

    def test_flow_control(self):
        kind, text = describe_frame(
            frame(bytes([0x30, 0x00, 0x00, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA])),
            DIR_TESTER_TO_ECU,
        )
        assert kind == "isotp"

    def test_other_traffic_not_decoded_as_service(self):
        kind, _ = describe_frame(frame(b"\x01\x02\x03", 0x100), DIR_OTHER)
        assert kind not in ("response",)
