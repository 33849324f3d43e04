"""ISO-TP (DoCAN) segmentation and reassembly over 8-byte CAN frames.

Normal addressing only: the peer is implied by the tx/rx CanId pair.
All frames are padded to 8 bytes (default pad 0xAA). One transfer in
flight per direction; a new FirstFrame aborts any incomplete reassembly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .canbus import BusPort, CanFrame, CanId

MAX_PAYLOAD = 4095  # 12-bit FirstFrame length field
DEFAULT_PAD = 0xAA
FRAME_SIZE = 8

PCI_SINGLE = 0x0
PCI_FIRST = 0x1
PCI_CONSECUTIVE = 0x2
PCI_FLOW_CONTROL = 0x3

MS_NS = 1_000_000
US_NS = 1_000

# Consecutive FC Wait frames tolerated before the sender aborts.
MAX_WAIT_FRAMES = 3


class IsoTpError(Exception):
    pass


class EmptyPayload(IsoTpError):
    pass


class PayloadTooLarge(IsoTpError):
    pass


class WrongSequenceNumber(IsoTpError):
    pass


class NCrTimeout(IsoTpError):
    pass


class NBsTimeout(IsoTpError):
    pass


class UnexpectedPci(IsoTpError):
    pass


class ReservedStMin(IsoTpError):
    pass


class FlowControlOverflow(IsoTpError):
    pass


class WaitLimitExceeded(IsoTpError):
    pass


class TransferBusy(IsoTpError):
    pass


class FlowStatus(IntEnum):
    CONTINUE_TO_SEND = 0
    WAIT = 1
    OVERFLOW = 2


@dataclass(frozen=True)
class FlowControlParams:
    status: FlowStatus = FlowStatus.CONTINUE_TO_SEND
    block_size: int = 0  # 0 = unlimited
    stmin_raw: int = 0


@dataclass(frozen=True)
class TpTimers:
    n_bs_ms: int = 1000
    n_cr_ms: int = 1000

    def __post_init__(self):
        if self.n_bs_ms <= 0 or self.n_cr_ms <= 0:
            raise IsoTpError("timeouts must be positive")


@dataclass(frozen=True)
class TpEndpoint:
    tx_id: CanId
    rx_id: CanId
    pad: int = DEFAULT_PAD

    def __post_init__(self):
        if self.tx_id == self.rx_id:
            raise IsoTpError("tx_id and rx_id must differ")


def stmin_duration(raw: int) -> int:
    """Separation time in nanoseconds for an STmin byte."""
    if 0x00 <= raw <= 0x7F:
        return raw * MS_NS
    if 0xF1 <= raw <= 0xF9:
        return (raw - 0xF0) * 100 * US_NS
    raise ReservedStMin(f"STmin byte 0x{raw:02X} is reserved")


def frame_count(length: int) -> int:
    """Frames needed for a payload of the given length."""
    if length <= 7:
        return 1
    return 1 + math.ceil((length - 6) / 7)


def segment(payload: bytes, pad: int = DEFAULT_PAD) -> list[bytes]:
    """Split a payload into padded 8-byte frame data blocks."""
    if not payload:
        raise EmptyPayload("ISO-TP payload must be at least 1 byte")
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{len(payload)} > {MAX_PAYLOAD}")
    if len(payload) <= 7:
        sf = bytes([len(payload)]) + payload
        return [sf + bytes([pad]) * (FRAME_SIZE - len(sf))]
    frames = [
        bytes([0x10 | (len(payload) >> 8), len(payload) & 0xFF]) + payload[:6]
    ]
    sn = 1
    pos = 6
    while pos < len(payload):
        chunk = payload[pos : pos + 7]
        frame = bytes([0x20 | sn]) + chunk
        frames.append(frame + bytes([pad]) * (FRAME_SIZE - len(frame)))
        pos += 7
        sn = (sn + 1) % 16
    return frames


def make_flow_control(p: FlowControlParams, pad: int = DEFAULT_PAD) -> bytes:
    stmin_duration(p.stmin_raw)  # reject reserved values
    if not 0 <= p.block_size <= 0xFF:
        raise IsoTpError("block size must fit a byte")
    head = bytes([0x30 | int(p.status), p.block_size, p.stmin_raw])
    return head + bytes([pad]) * (FRAME_SIZE - len(head))


def parse_flow_control(data: bytes) -> FlowControlParams:
    if len(data) < 3 or (data[0] >> 4) != PCI_FLOW_CONTROL:
        raise UnexpectedPci("not a flow-control frame")
    status = data[0] & 0x0F
    if status > 2:
        raise UnexpectedPci(f"flow status {status} is reserved")
    return FlowControlParams(FlowStatus(status), data[1], data[2])


# ---------------------------------------------------------------------------
# Reassembly


@dataclass(frozen=True)
class RxProgress:
    received: int
    total: int


@dataclass(frozen=True)
class RxComplete:
    payload: bytes


@dataclass(frozen=True)
class RxNeedFlowControl:
    declared_length: int


@dataclass(frozen=True)
class RxDiscard:
    """Frame dropped at the transport layer (malformed on the wire)."""

    reason: str


RxEvent = RxProgress | RxComplete | RxNeedFlowControl | RxDiscard


class Reassembler:
    """Sequential receive state machine for one peer."""

    def __init__(self, timers: TpTimers = TpTimers()):
        self.timers = timers
        self._buf: Optional[bytearray] = None
        self._total = 0
        self._expected_sn = 0
        self._cr_deadline: Optional[int] = None

    @property
    def in_progress(self) -> bool:
        return self._buf is not None

    def _abort(self) -> None:
        self._buf = None
        self._cr_deadline = None

    def check_timeout(self, now_ns: int) -> None:
        if self._cr_deadline is not None and now_ns > self._cr_deadline:
            self._abort()
            raise NCrTimeout("no consecutive frame within N_Cr")

    def feed(self, data: bytes, now_ns: int) -> RxEvent:
        if not data:
            return RxDiscard("empty frame")
        pci = data[0] >> 4
        if pci == PCI_SINGLE:
            length = data[0] & 0x0F
            self._abort()  # a new message supersedes any partial transfer
            if length == 0 or length > 7:
                return RxDiscard(f"single-frame length nibble {length}")
            if len(data) < 1 + length:
                return RxDiscard("frame shorter than declared single-frame length")
            return RxComplete(bytes(data[1 : 1 + length]))
        if pci == PCI_FIRST:
            if len(data) < FRAME_SIZE:
                return RxDiscard("first frame shorter than 8 bytes")
            length = ((data[0] & 0x0F) << 8) | data[1]
            if length <= 7:
                return RxDiscard("first-frame length fits a single frame")
            self._buf = bytearray(data[2:8])
            self._total = length
            self._expected_sn = 1
            self._cr_deadline = now_ns + self.timers.n_cr_ms * MS_NS
            return RxNeedFlowControl(length)
        if pci == PCI_CONSECUTIVE:
            if self._buf is None:
                raise UnexpectedPci("consecutive frame without a first frame")
            self.check_timeout(now_ns)
            sn = data[0] & 0x0F
            if sn != self._expected_sn:
                self._abort()
                raise WrongSequenceNumber(
                    f"got SN {sn}, expected {self._expected_sn}"
                )
            need = self._total - len(self._buf)
            chunk = data[1 : 1 + min(7, need)]
            if len(chunk) < min(7, need):
                self._abort()
                return RxDiscard("consecutive frame shorter than required chunk")
            self._buf.extend(chunk)
            self._expected_sn = (self._expected_sn + 1) % 16
            self._cr_deadline = now_ns + self.timers.n_cr_ms * MS_NS
            if len(self._buf) >= self._total:
                payload = bytes(self._buf[: self._total])
                self._abort()
                return RxComplete(payload)
            return RxProgress(len(self._buf), self._total)
        raise UnexpectedPci(f"PCI nibble 0x{pci:X}")


# ---------------------------------------------------------------------------
# Transmission


class TxTransfer:
    """Sending side of one message: FF/FC handshake, CF pacing."""

    def __init__(self, payload: bytes, pad: int, timers: TpTimers, now_ns: int):
        self.frames = segment(payload, pad)
        self.timers = timers
        self._next_index = 0
        self._multi = len(self.frames) > 1
        self._awaiting_fc = False
        self._bs_deadline: Optional[int] = None
        self._block_budget = 0  # CFs allowed before the next FC; <0 = unlimited
        self._gap_ns = 0
        self._next_cf_at = 0
        self._wait_count = 0
        self._start_ns = now_ns

    @property
    def done(self) -> bool:
        return self._next_index >= len(self.frames)

    def on_flow_control(self, fc: FlowControlParams, now_ns: int) -> None:
        if not self._awaiting_fc:
            raise UnexpectedPci("flow control while not awaiting one")
        if fc.status == FlowStatus.OVERFLOW:
            raise FlowControlOverflow("receiver reported overflow")
        if fc.status == FlowStatus.WAIT:
            self._wait_count += 1
            if self._wait_count > MAX_WAIT_FRAMES:
                raise WaitLimitExceeded(
                    f"more than {MAX_WAIT_FRAMES} consecutive Wait frames"
                )
            self._bs_deadline = now_ns + self.timers.n_bs_ms * MS_NS
            return
        self._wait_count = 0
        self._awaiting_fc = False
        self._bs_deadline = None
        self._block_budget = fc.block_size if fc.block_size > 0 else -1
        self._gap_ns = stmin_duration(fc.stmin_raw)
        self._next_cf_at = now_ns  # first CF may go immediately

    def poll(self, now_ns: int) -> list[bytes]:
        """Frame data blocks due for transmission at now."""
        if self.done:
            return []
        if self._awaiting_fc:
            if self._bs_deadline is not None and now_ns > self._bs_deadline:
                raise NBsTimeout("no flow control within N_Bs")
            return []
        out: list[bytes] = []
        if self._next_index == 0:
            out.append(self.frames[0])
            self._next_index = 1
            if self._multi:
                self._awaiting_fc = True
                self._bs_deadline = now_ns + self.timers.n_bs_ms * MS_NS
            return out
        # Consecutive frames, paced by STmin and bounded by block size.
        while (
            not self.done
            and self._block_budget != 0
            and now_ns >= self._next_cf_at
        ):
            out.append(self.frames[self._next_index])
            self._next_index += 1
            self._next_cf_at = now_ns + self._gap_ns
            if self._block_budget > 0:
                self._block_budget -= 1
            if self._gap_ns > 0:
                break  # at most one paced CF per poll tick
        if not self.done and self._block_budget == 0:
            self._awaiting_fc = True
            self._bs_deadline = now_ns + self.timers.n_bs_ms * MS_NS
        return out


class IsoTpLink:
    """Full-duplex endpoint bound to a bus port and a tx/rx id pair."""

    def __init__(
        self,
        port: BusPort,
        endpoint: TpEndpoint,
        timers: TpTimers = TpTimers(),
        fc_params: FlowControlParams = FlowControlParams(),
    ):
        self.port = port
        self.endpoint = endpoint
        self.timers = timers
        self.fc_params = fc_params
        self._rx = Reassembler(timers)
        self._tx: Optional[TxTransfer] = None
        self.last_error: Optional[IsoTpError] = None
        self.frames_sent = 0

    @property
    def tx_busy(self) -> bool:
        return self._tx is not None and not self._tx.done

    def send(self, payload: bytes, now_ns: int) -> None:
        if self.tx_busy:
            raise TransferBusy("a transfer is already in flight")
        self._tx = TxTransfer(payload, self.endpoint.pad, self.timers, now_ns)

    def _transmit(self, data: bytes) -> None:
        self.port.send(CanFrame(self.endpoint.tx_id, data))
        self.frames_sent += 1

    def poll(self, now_ns: int) -> None:
        if self._tx is not None:
            try:
                for data in self._tx.poll(now_ns):
                    self._transmit(data)
            except IsoTpError as exc:
                self.last_error = exc
                self._tx = None
            else:
                if self._tx is not None and self._tx.done:
                    self._tx = None
        try:
            self._rx.check_timeout(now_ns)
        except IsoTpError as exc:
            self.last_error = exc

    def handle_frame(self, frame: CanFrame, now_ns: int) -> Optional[bytes]:
        """Process one received frame; returns a payload when complete."""
        if frame.can_id != self.endpoint.rx_id or frame.rtr:
            return None
        data = frame.data
        if data and (data[0] >> 4) == PCI_FLOW_CONTROL:
            if self._tx is None:
                return None  # stray FC
            try:
                self._tx.on_flow_control(parse_flow_control(data), now_ns)
            except IsoTpError as exc:
                self.last_error = exc
                self._tx = None
            return None
        try:
            event = self._rx.feed(data, now_ns)
        except IsoTpError as exc:
            self.last_error = exc
            return None
        if isinstance(event, RxComplete):
            return event.payload
        if isinstance(event, RxNeedFlowControl):
            self._transmit(make_flow_control(self.fc_params, self.endpoint.pad))
        return None
