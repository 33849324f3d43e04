"""Diagnostic client: request/response correlation, response-pending
handling, keep-alive scheduling, security unlock and periodic DID polling.

A Connection is a bus node in the co-simulated world and drives the
world's clock while waiting for a reply, so tester and ECU share one
deterministic timeline.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from . import codec
from .canbus import CanFrame, CanId
from .codec import (
    NegativeResponse,
    Nrc,
    PositiveResponse,
    Request,
    Response,
    SubFunction,
)
from .ecu import KEY_FUNCTIONS, DidSpec
from .isotp import IsoTpLink, TpEndpoint, TpTimers
from .sim import World

MS_NS = 1_000_000


class TesterError(Exception):
    pass


class RequestTimeout(TesterError):
    pass


class TooManyPendingExtensions(TesterError):
    pass


class RequestOutstanding(TesterError):
    pass


class UnlockError(TesterError):
    def __init__(self, nrc: Nrc):
        super().__init__(f"unlock failed: {nrc.short_name}")
        self.nrc = nrc


class InvalidKey(UnlockError):
    pass


class LockedOut(UnlockError):
    pass


class SequenceError(UnlockError):
    pass


class SuppressedOk:
    """A suppress-bit request that stayed silent for the full P2 window."""

    def __repr__(self) -> str:
        return "SuppressedOk"


SUPPRESSED_OK = SuppressedOk()


@dataclass(frozen=True)
class TesterConfig:
    p2_timeout_ms: int = 150
    p2_star_timeout_ms: int = 5000
    tp_period_ms: int = 2000  # should stay below the server's S3 for liveness
    max_pending_extensions: int = 10


@dataclass(frozen=True)
class PollEntry:
    did: int
    period_ms: int

    def __post_init__(self):
        if self.period_ms <= 0:
            raise TesterError("poll period must be positive")


@dataclass(frozen=True)
class PollList:
    entries: tuple[PollEntry, ...]

    def __post_init__(self):
        dids = [e.did for e in self.entries]
        if len(set(dids)) != len(dids):
            raise TesterError("poll list entries must be unique by DID")

    @classmethod
    def of(cls, *pairs: tuple[int, int]) -> "PollList":
        return cls(tuple(PollEntry(did, period) for did, period in pairs))


@dataclass(frozen=True)
class Sample:
    t_ns: int
    did: int
    raw: Optional[bytes]
    scaled: Optional[float]
    unit: str = ""
    error: Optional[str] = None


class Connection:
    """One tester connection to the world's ECU over the OBD2 port."""

    def __init__(self, world: World, cfg: TesterConfig = TesterConfig()):
        self.world = world
        self.cfg = cfg
        self.port = world.attach_obd2_port()
        ecu_cfg = world.cfg
        self.link = IsoTpLink(
            self.port,
            TpEndpoint(tx_id=CanId(ecu_cfg.request_id), rx_id=CanId(ecu_cfg.response_id)),
        )
        self._rx: deque[tuple[bytes, int]] = deque()
        self._outstanding: Optional[int] = None
        # Session as last observed from responses; the ECU may have dropped
        # to default via S3 without the tester noticing.
        self.session = codec.SESSION_DEFAULT
        self.keep_alive_enabled = False
        self._last_tp_ns: Optional[int] = None
        world.add_node(self)

    # -- world node hooks ---------------------------------------------------

    def poll(self, now_ns: int) -> None:
        self.link.poll(now_ns)
        if (
            self.keep_alive_enabled
            and self.session != codec.SESSION_DEFAULT
            and not self.link.tx_busy
        ):
            if self._last_tp_ns is None:
                self._last_tp_ns = now_ns
            elif now_ns >= self._last_tp_ns + self.cfg.tp_period_ms * MS_NS:
                # Suppress bit set: never interleaves with response correlation.
                self.link.send(
                    bytes([codec.SID_TESTER_PRESENT, codec.SUPPRESS_BIT]), now_ns
                )
                self._last_tp_ns = now_ns

    def on_frame(self, frame: CanFrame, now_ns: int) -> None:
        payload = self.link.handle_frame(frame, now_ns)
        if payload is not None:
            self._rx.append((payload, now_ns))

    def notice_session(self, session: int) -> None:
        self.session = session
        if session == codec.SESSION_DEFAULT:
            self._last_tp_ns = None

    def enable_keep_alive(self, enabled: bool = True) -> None:
        self.keep_alive_enabled = enabled
        self._last_tp_ns = None

    # -- requests -----------------------------------------------------------

    def request(self, req: Request):
        return self.request_raw(codec.encode_request(req))

    def request_raw(self, raw: bytes):
        """Send one service request; returns a Response or SUPPRESSED_OK."""
        if self._outstanding is not None:
            raise RequestOutstanding("another request is outstanding")
        sid = raw[0]
        info = codec.SERVICE_TABLE.get(sid)
        suppress = bool(
            info and info.has_sub_function and len(raw) > 1 and raw[1] & codec.SUPPRESS_BIT
        )
        self._rx.clear()
        self.link.send(raw, self.world.now_ns)
        self._outstanding = sid
        deadline = self.world.now_ns + self.cfg.p2_timeout_ms * MS_NS
        extensions = 0
        try:
            while True:
                if self._rx:
                    payload, t = self._rx.popleft()
                    resp = codec.decode_response(payload, sid)
                    if codec.is_response_pending(resp):
                        extensions += 1
                        if extensions > self.cfg.max_pending_extensions:
                            raise TooManyPendingExtensions(
                                f"more than {self.cfg.max_pending_extensions} NRC 0x78"
                            )
                        deadline = t + self.cfg.p2_star_timeout_ms * MS_NS
                        continue
                    self._note_session_change(raw, resp)
                    return resp
                if self.world.now_ns >= deadline:
                    if suppress:
                        self._note_session_change(raw, None)
                        return SUPPRESSED_OK
                    raise RequestTimeout(
                        f"no response to 0x{sid:02X} within the deadline"
                    )
                self.world.step()
        finally:
            self._outstanding = None

    def _note_session_change(self, raw: bytes, resp: Optional[Response]) -> None:
        if raw[0] != codec.SID_SESSION_CONTROL or len(raw) < 2:
            return
        if resp is None or isinstance(resp, PositiveResponse):
            self.notice_session(raw[1] & 0x7F)

    # -- workflows ----------------------------------------------------------

    def session_control(self, target: int, suppress: bool = False):
        return self.request(
            Request(codec.SID_SESSION_CONTROL, SubFunction(target, suppress))
        )

    def tester_present(self, suppress: bool = False):
        return self.request(
            Request(codec.SID_TESTER_PRESENT, SubFunction(0x00, suppress))
        )

    def unlock(
        self,
        level: int = 1,
        key_fn: Callable[[bytes], bytes] | str = "complement",
    ) -> str:
        """Seed-key handshake; returns 'unlocked' or 'already-unlocked'."""
        if isinstance(key_fn, str):
            key_fn = KEY_FUNCTIONS[key_fn]
        resp = self.request(Request(codec.SID_SECURITY_ACCESS, SubFunction(level)))
        if isinstance(resp, NegativeResponse):
            raise self._unlock_error(resp.nrc)
        seed = resp.data[1:5]
        if seed == b"\x00" * 4:
            return "already-unlocked"
        resp = self.request(
            Request(codec.SID_SECURITY_ACCESS, SubFunction(level + 1), key_fn(seed))
        )
        if isinstance(resp, NegativeResponse):
            raise self._unlock_error(resp.nrc)
        return "unlocked"

    @staticmethod
    def _unlock_error(nrc: Nrc) -> UnlockError:
        if nrc == Nrc.INVALID_KEY:
            return InvalidKey(nrc)
        if nrc in (Nrc.EXCEEDED_ATTEMPTS, Nrc.REQUIRED_TIME_DELAY):
            return LockedOut(nrc)
        if nrc == Nrc.REQUEST_SEQUENCE_ERROR:
            return SequenceError(nrc)
        return UnlockError(nrc)

    def read_did(self, *dids: int):
        data = b"".join(d.to_bytes(2, "big") for d in dids)
        return self.request(Request(codec.SID_READ_DID, None, data))

    def write_did(self, did: int, value: bytes):
        return self.request(
            Request(codec.SID_WRITE_DID, None, did.to_bytes(2, "big") + value)
        )

    def read_dtcs(self, sub: int = 0x0A, data: bytes = b""):
        return self.request(Request(codec.SID_READ_DTC, SubFunction(sub), data))

    def clear_dtcs(self, group: int = 0xFFFFFF):
        return self.request(
            Request(codec.SID_CLEAR_DTC, None, group.to_bytes(3, "big"))
        )

    # -- DAQ-style polling --------------------------------------------------

    def poll_dids(
        self,
        poll_list: PollList,
        duration_ms: float,
        did_info: Optional[dict[int, DidSpec]] = None,
        batch: Optional[bool] = None,
    ) -> list[Sample]:
        """Poll each entry at its period for the duration; samples carry the
        request timestamp and scaled values per the DID map."""
        if did_info is None:
            did_info = self.world.cfg.dids
        if batch is None:
            worst = 1 + sum(
                2 + (did_info[e.did].width if e.did in did_info else 2)
                for e in poll_list.entries
            )
            batch = worst <= self.world.cfg.max_response_length
        next_due = {e.did: self.world.now_ns for e in poll_list.entries}
        period = {e.did: e.period_ms * MS_NS for e in poll_list.entries}
        end = self.world.now_ns + int(duration_ms * MS_NS)
        samples: list[Sample] = []
        while self.world.now_ns < end:
            due = sorted(d for d, t in next_due.items() if t <= self.world.now_ns)
            if not due:
                self.world.step()
                continue
            t_req = self.world.now_ns
            if batch and len(due) > 1:
                resp = self.read_did(*due)
                if isinstance(resp, PositiveResponse):
                    samples.extend(self._parse_batch(resp.data, due, t_req, did_info))
                else:
                    # Isolate the failing entry; poll the rest individually.
                    for did in due:
                        samples.append(self._poll_one(did, t_req, did_info))
            else:
                for did in due:
                    samples.append(self._poll_one(did, t_req, did_info))
            for did in due:
                next_due[did] = next_due[did] + period[did]
        return samples

    def _poll_one(self, did: int, t_ns: int, did_info: dict[int, DidSpec]) -> Sample:
        try:
            resp = self.read_did(did)
        except TesterError as exc:
            return Sample(t_ns, did, None, None, error=str(exc))
        if isinstance(resp, NegativeResponse):
            return Sample(t_ns, did, None, None, error=resp.nrc.short_name)
        value = resp.data[2:]
        return self._sample(did, t_ns, value, did_info)

    def _sample(
        self, did: int, t_ns: int, value: bytes, did_info: dict[int, DidSpec]
    ) -> Sample:
        spec = did_info.get(did)
        if spec is None:
            return Sample(t_ns, did, value, float(int.from_bytes(value, "big")))
        return Sample(t_ns, did, value, spec.scaled(value), spec.unit)

    def _parse_batch(
        self,
        data: bytes,
        dids: Iterable[int],
        t_ns: int,
        did_info: dict[int, DidSpec],
    ) -> list[Sample]:
        out = []
        pos = 0
        for did in dids:
            width = did_info[did].width if did in did_info else 2
            pos += 2  # echoed DID
            out.append(self._sample(did, t_ns, data[pos : pos + width], did_info))
            pos += width
        return out
