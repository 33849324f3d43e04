"""Session runtime shared by the HTTP service and the CLI.

One runtime owns a co-simulated world plus a tester connection and fans
out JSON events (trace records, samples, state changes) to stream
consumers. With real_time=True a background thread advances the
simulated clock at wall speed; in turbo mode time only advances while
requests run (or via advance()).
"""
from __future__ import annotations

import threading
import time
from collections import deque
from typing import Optional

from .. import codec
from ..ecu import EcuConfig
from ..sim import World
from ..tester import (
    Connection,
    PollEntry,
    PollList,
    RequestOutstanding,
    SUPPRESSED_OK,
    TesterError,
)
from ..trace import Recording

MS_NS = 1_000_000
EVENT_BUFFER = 10_000


class SessionBusy(Exception):
    pass


def trace_row(rec) -> dict:
    return Recording._row(rec)


class SessionRuntime:
    def __init__(self, session_id: str, cfg: EcuConfig, real_time: bool = False):
        self.id = session_id
        self.cfg = cfg
        self.world = World(cfg)
        self.conn = Connection(self.world)
        self.lock = threading.Lock()
        self.events: deque[dict] = deque(maxlen=EVENT_BUFFER)
        self._event_seq = 0
        self._trace_cursor = 0
        self._last_state: Optional[dict] = None
        self.poll_entries: list[PollEntry] = []
        self._poll_due: dict[int, int] = {}
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._pump()
        if real_time:
            self._thread = threading.Thread(target=self._run_real_time, daemon=True)
            self._thread.start()

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1.0)

    # -- events -------------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> None:
        self.events.append({"seq": self._event_seq, "type": kind, **payload})
        self._event_seq += 1

    def _state_snapshot(self) -> dict:
        st = self.world.ecu.state
        return {
            "session": codec.SESSION_NAMES.get(st.active_session, "unknown"),
            "unlocked_levels": sorted(st.unlocked_levels),
            "s3_deadline_ns": st.s3_deadline,
            "lockout_until_ns": st.lockout_until,
            "dtc_count": len(st.dtc_store),
            "now_ns": self.world.now_ns,
        }

    def _pump(self) -> None:
        """Mirror new trace records and state changes into the event stream."""
        for rec in self.world.recording.records():
            if rec.seq >= self._trace_cursor:
                row = trace_row(rec)
                # the row's own seq is the trace-record counter; the event
                # stream has its own numbering
                row["record_seq"] = row.pop("seq")
                self._emit("trace", row)
                self._trace_cursor = rec.seq + 1
        snap = self._state_snapshot()
        comparable = {k: v for k, v in snap.items() if k != "now_ns"}
        last = (
            {k: v for k, v in self._last_state.items() if k != "now_ns"}
            if self._last_state
            else None
        )
        if comparable != last:
            self._last_state = snap
            self._emit("state", snap)

    def events_since(self, seq: int) -> list[dict]:
        return [e for e in self.events if e["seq"] >= seq]

    # -- clock driving ------------------------------------------------------

    def _service_poll_list(self) -> None:
        now = self.world.now_ns
        due = sorted(d for d, t in self._poll_due.items() if t <= now)
        if not due:
            return
        for did in due:
            t_req = self.world.now_ns
            sample = self.conn._poll_one(did, t_req, self.cfg.dids)
            self._emit(
                "sample",
                {
                    "t_ns": sample.t_ns,
                    "did": f"0x{sample.did:04X}",
                    "raw_hex": sample.raw.hex() if sample.raw else None,
                    "scaled": sample.scaled,
                    "unit": sample.unit,
                    "error": sample.error,
                },
            )
        period = {e.did: e.period_ms * MS_NS for e in self.poll_entries}
        for did in due:
            self._poll_due[did] += period[did]

    def advance(self, ms: float) -> None:
        """Advance simulated time (turbo mode driver)."""
        with self.lock:
            end = self.world.now_ns + int(ms * MS_NS)
            while self.world.now_ns < end:
                self.world.step()
                self._service_poll_list()
            self._pump()

    def _run_real_time(self) -> None:
        last = time.monotonic_ns()
        while not self._stop.is_set():
            time.sleep(0.01)
            with self.lock:
                now = time.monotonic_ns()
                target = self.world.now_ns + (now - last)
                last = now
                while self.world.now_ns < target:
                    self.world.step()
                    self._service_poll_list()
                self._pump()

    # -- operations (each takes the session lock) ---------------------------

    def _locked(self):
        if not self.lock.acquire(blocking=False):
            raise SessionBusy("a request is already outstanding on this session")
        return self.lock

    def request_hex(self, hex_payload: str) -> dict:
        raw = bytes.fromhex(hex_payload)
        lock = self._locked()
        try:
            try:
                resp = self.conn.request_raw(raw)
            except TesterError as exc:
                self._pump()
                return {"request_hex": raw.hex(), "status": "error", "decode": str(exc)}
            self._pump()
            return self._format_response(raw, resp)
        finally:
            lock.release()

    @staticmethod
    def _format_response(raw: bytes, resp) -> dict:
        out = {"request_hex": raw.hex()}
        if resp is SUPPRESSED_OK:
            out.update({"status": "suppressed", "response_hex": None, "decode": "suppressed positive response"})
            return out
        wire = codec.encode_response(resp)
        if isinstance(resp, codec.NegativeResponse):
            decode = f"{codec.service_name(resp.request_sid)} negative: {resp.nrc.short_name}"
            status = "negative"
        else:
            decode = f"{codec.service_name(resp.sid)} ok"
            status = "positive"
        out.update({"status": status, "response_hex": wire.hex(), "decode": decode})
        return out

    def session_control(self, target: int) -> dict:
        lock = self._locked()
        try:
            resp = self.conn.session_control(target)
            self._pump()
            return self._format_response(
                bytes([codec.SID_SESSION_CONTROL, target]), resp
            )
        finally:
            lock.release()

    def unlock(self, level: int) -> dict:
        lock = self._locked()
        try:
            try:
                outcome = self.conn.unlock(level)
                return {"status": outcome}
            except TesterError as exc:
                return {"status": "error", "decode": str(exc)}
            finally:
                self._pump()
        finally:
            lock.release()

    def set_poll_list(self, entries: list[PollEntry]) -> None:
        PollList(tuple(entries))  # validate
        with self.lock:
            self.poll_entries = list(entries)
            self._poll_due = {e.did: self.world.now_ns for e in entries}

    def clear_dtcs(self, group: int) -> dict:
        lock = self._locked()
        try:
            resp = self.conn.clear_dtcs(group)
            self._pump()
            return self._format_response(
                bytes([codec.SID_CLEAR_DTC]) + group.to_bytes(3, "big"), resp
            )
        finally:
            lock.release()

    def inject_fault(self, dtc_hex: str, status: int) -> dict:
        raw = codec.parse_dtc_raw(dtc_hex)
        with self.lock:
            rec = self.world.ecu.inject_fault(raw, status, self.world.now_ns)
            self._pump()
            return {
                "dtc": codec.format_dtc(rec.dtc),
                "snapshot": {f"0x{d:04X}": v.hex() for d, v in rec.snapshot},
            }

    def keep_alive(self, enabled: bool) -> None:
        with self.lock:
            self.conn.enable_keep_alive(enabled)
