"""In-process simulated CAN bus.

Nodes attach ports; each step drains every port's outbound queue and
broadcasts frames in identifier-priority order. The bus is lossless and
error-frame-free; arbitration is modeled only as the per-step ordering
rule (lower identifier wins, standard before extended, enqueue order as
the final tiebreak). Time is injected by the caller.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

STANDARD_ID_LIMIT = 1 << 11  # 2048 identifiers
EXTENDED_ID_LIMIT = 1 << 29


class CanBusError(Exception):
    pass


class IdOutOfRange(CanBusError):
    pass


class ClockWentBackwards(CanBusError):
    pass


@dataclass(frozen=True, order=True)
class CanId:
    value: int
    extended: bool = False

    def __post_init__(self):
        limit = EXTENDED_ID_LIMIT if self.extended else STANDARD_ID_LIMIT
        if not 0 <= self.value < limit:
            space = "extended" if self.extended else "standard"
            raise IdOutOfRange(f"0x{self.value:X} does not fit the {space} id space")

    def __str__(self) -> str:
        return f"{self.value:08X}" if self.extended else f"{self.value:03X}"


def validate_id(value: int, extended: bool = False) -> CanId:
    return CanId(value, extended)


@dataclass(frozen=True)
class CanFrame:
    can_id: CanId
    data: bytes = b""
    rtr: bool = False
    dlc: Optional[int] = None

    def __post_init__(self):
        if self.rtr:
            if self.data:
                raise CanBusError("RTR frames carry no data")
            if self.dlc is None:
                object.__setattr__(self, "dlc", 0)
        else:
            if self.dlc is None:
                object.__setattr__(self, "dlc", len(self.data))
            elif self.dlc != len(self.data):
                raise CanBusError(f"dlc {self.dlc} != data length {len(self.data)}")
        if not 0 <= self.dlc <= 8:
            raise CanBusError(f"dlc {self.dlc} outside 0..8")


IdFilter = Callable[[CanId], bool]


class BusPort:
    """One attachment point on the bus. Never sees its own transmissions."""

    def __init__(self, bus: "CanBus", port_id: int, id_filter: Optional[IdFilter]):
        self._bus = bus
        self.port_id = port_id
        self.id_filter = id_filter
        self._inbound: deque[CanFrame] = deque()

    def send(self, frame: CanFrame) -> None:
        self._bus._enqueue(self, frame)

    def receive(self) -> Optional[CanFrame]:
        return self._inbound.popleft() if self._inbound else None

    def accepts(self, can_id: CanId) -> bool:
        return self.id_filter is None or self.id_filter(can_id)

    def __repr__(self) -> str:
        return f"BusPort({self.port_id})"


@dataclass(frozen=True)
class TapEvent:
    """One frame transmission as seen by the trace tap."""

    t_ns: int
    origin_port: int
    frame: CanFrame


@dataclass
class _Pending:
    frame: CanFrame
    origin: BusPort
    seq: int


class CanBus:
    def __init__(self):
        self._ports: list[BusPort] = []
        self._pending: list[_Pending] = []
        self._enqueue_seq = 0
        self._last_now: Optional[int] = None

    def attach(self, id_filter: Optional[IdFilter] = None) -> BusPort:
        port = BusPort(self, len(self._ports), id_filter)
        self._ports.append(port)
        return port

    def _enqueue(self, port: BusPort, frame: CanFrame) -> None:
        self._pending.append(_Pending(frame, port, self._enqueue_seq))
        self._enqueue_seq += 1

    @staticmethod
    def arbitrate(pending: list[_Pending]) -> list[_Pending]:
        # Lower id wins; standard beats extended at equal value; stable
        # by enqueue order for identical keys.
        return sorted(
            pending, key=lambda p: (p.frame.can_id.value, p.frame.can_id.extended, p.seq)
        )

    def step(self, now_ns: int) -> list[TapEvent]:
        if self._last_now is not None and now_ns < self._last_now:
            raise ClockWentBackwards(f"{now_ns} < {self._last_now}")
        self._last_now = now_ns
        taps: list[TapEvent] = []
        for p in self.arbitrate(self._pending):
            for port in self._ports:
                if port is p.origin:
                    continue
                if port.accepts(p.frame.can_id):
                    port._inbound.append(p.frame)
            taps.append(TapEvent(now_ns, p.origin.port_id, p.frame))
        self._pending.clear()
        return taps
