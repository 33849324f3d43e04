"""Deterministic co-simulation: bus, ECU node, background traffic, trace tap.

One coordinator owns the clock and advances everything in fixed ticks.
Within a tick: every node polls (timers, due transmissions), the bus
broadcasts in arbitration order, then nodes consume their inbound frames.
Frames produced while consuming go out on the next tick.
"""
from __future__ import annotations

from collections import deque
from typing import Optional, Protocol

from .canbus import BusPort, CanBus, CanFrame, CanId
from .ecu import Ecu, EcuConfig, gateway_filter
from .isotp import IsoTpLink, TpEndpoint, TpTimers
from .trace import (
    DIR_ECU_TO_TESTER,
    DIR_OTHER,
    DIR_TESTER_TO_ECU,
    Recording,
    describe_frame,
)

MS_NS = 1_000_000


class Node(Protocol):
    def poll(self, now_ns: int) -> None: ...

    def on_frame(self, frame: CanFrame, now_ns: int) -> None: ...


class EcuNode:
    """Bus attachment for one ECU: ISO-TP endpoint plus response scheduling."""

    def __init__(self, bus: CanBus, ecu: Ecu, timers: TpTimers = TpTimers()):
        self.ecu = ecu
        cfg = ecu.cfg
        self.port = bus.attach(
            lambda cid: cid.value == cfg.request_id and not cid.extended
        )
        self.link = IsoTpLink(
            self.port,
            TpEndpoint(tx_id=CanId(cfg.response_id), rx_id=CanId(cfg.request_id)),
            timers,
        )
        self._outbox: list[tuple[int, int, bytes]] = []  # (due, order, payload)
        self._order = 0
        self._sendq: deque[bytes] = deque()

    def on_frame(self, frame: CanFrame, now_ns: int) -> None:
        payload = self.link.handle_frame(frame, now_ns)
        if payload is not None:
            for due, wire in self.ecu.handle_payload(payload, now_ns):
                self._outbox.append((due, self._order, wire))
                self._order += 1

    def poll(self, now_ns: int) -> None:
        self.ecu.tick(now_ns)
        if self._outbox:
            self._outbox.sort()
            while self._outbox and self._outbox[0][0] <= now_ns:
                self._sendq.append(self._outbox.pop(0)[2])
        if self._sendq and not self.link.tx_busy:
            self.link.send(self._sendq.popleft(), now_ns)
        self.link.poll(now_ns)


class BackgroundNode:
    """Periodic broadcaster standing in for normal operational CAN traffic."""

    def __init__(self, bus: CanBus, can_id: CanId, period_ms: int, data: bytes):
        self.port = bus.attach(lambda cid: False)  # transmit-only
        self.can_id = can_id
        self.period_ns = period_ms * MS_NS
        self.data = data
        self._next_at = 0

    def on_frame(self, frame: CanFrame, now_ns: int) -> None:
        pass

    def poll(self, now_ns: int) -> None:
        if now_ns >= self._next_at:
            self.port.send(CanFrame(self.can_id, self.data))
            self._next_at = now_ns + self.period_ns


class World:
    """One ECU, one OBD2/tester port, optional background traffic."""

    def __init__(
        self,
        cfg: EcuConfig,
        tick_ms: float = 1.0,
        capacity: int = 100_000,
        length_check: bool = True,
        gateway: Optional[bool] = None,
    ):
        if gateway is not None:
            cfg.gateway_mode = gateway
        self.cfg = cfg
        self.bus = CanBus()
        self.recording = Recording(capacity)
        self.now_ns = 0
        self.tick_ns = int(tick_ms * MS_NS)
        self.ecu = Ecu(cfg, length_check=length_check)
        self.ecu_node = EcuNode(self.bus, self.ecu)
        self._nodes: list[Node] = [self.ecu_node]

    def attach_obd2_port(self) -> BusPort:
        """The tester-facing port; the gateway filter applies here."""
        return self.bus.attach(lambda cid: gateway_filter(self.cfg, cid))

    def add_node(self, node: Node) -> None:
        self._nodes.append(node)

    def add_background(
        self, can_id: int, period_ms: int = 10, data: bytes = b"\x00" * 8
    ) -> BackgroundNode:
        node = BackgroundNode(self.bus, CanId(can_id), period_ms, data)
        self.add_node(node)
        return node

    def _direction(self, frame: CanFrame) -> str:
        if frame.can_id.extended:
            return DIR_OTHER
        if frame.can_id.value == self.cfg.request_id:
            return DIR_TESTER_TO_ECU
        if frame.can_id.value == self.cfg.response_id:
            return DIR_ECU_TO_TESTER
        return DIR_OTHER

    def step(self) -> None:
        now = self.now_ns
        for node in self._nodes:
            node.poll(now)
        for tap in self.bus.step(now):
            direction = self._direction(tap.frame)
            kind, text = describe_frame(tap.frame, direction)
            self.recording.append(tap.t_ns, direction, tap.frame, kind, text)
        for node in self._nodes:
            port = getattr(node, "port", None)
            if port is None:
                continue
            while (frame := port.receive()) is not None:
                node.on_frame(frame, now)
        self.now_ns += self.tick_ns

    def run_for_ms(self, ms: float) -> None:
        end = self.now_ns + int(ms * MS_NS)
        while self.now_ns < end:
            self.step()
