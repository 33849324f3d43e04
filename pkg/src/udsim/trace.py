"""Time-synchronous trace recording, computed channels and triggered capture.

Exports use a documented CSV/JSONL schema rather than MDF: columns
t_ns, seq, dir, id_hex, extended, dlc, data_hex, decode_kind, decode_text.
"""
from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from . import codec
from .canbus import CanFrame, CanId

DEFAULT_CAPACITY = 1_000_000

DIR_TESTER_TO_ECU = "tester->ecu"
DIR_ECU_TO_TESTER = "ecu->tester"
DIR_OTHER = "other"


class TraceError(Exception):
    pass


class NonMonotonicTimestamp(TraceError):
    pass


class NeverFired(TraceError):
    pass


class EmptyRecording(TraceError):
    pass


class MissingInput(TraceError):
    pass


class CycleDetected(TraceError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    t_ns: int
    seq: int
    direction: str
    frame: CanFrame
    decode_kind: str = ""
    decode_text: str = ""


class Recording:
    """Append-only ring buffer of trace records, single writer."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self._records: deque[TraceRecord] = deque(maxlen=capacity)
        self._seq = 0
        self._last_t: Optional[int] = None

    def __len__(self) -> int:
        return len(self._records)

    def append(
        self,
        t_ns: int,
        direction: str,
        frame: CanFrame,
        decode_kind: str = "",
        decode_text: str = "",
    ) -> TraceRecord:
        if self._last_t is not None and t_ns < self._last_t:
            raise NonMonotonicTimestamp(f"{t_ns} < {self._last_t}")
        self._last_t = t_ns
        rec = TraceRecord(t_ns, self._seq, direction, frame, decode_kind, decode_text)
        self._seq += 1
        self._records.append(rec)
        return rec

    def records(self) -> list[TraceRecord]:
        return list(self._records)

    # -- export ------------------------------------------------------------

    CSV_COLUMNS = [
        "t_ns",
        "seq",
        "dir",
        "id_hex",
        "extended",
        "dlc",
        "data_hex",
        "decode_kind",
        "decode_text",
    ]

    @staticmethod
    def _row(rec: TraceRecord) -> dict:
        return {
            "t_ns": rec.t_ns,
            "seq": rec.seq,
            "dir": rec.direction,
            "id_hex": f"{rec.frame.can_id.value:x}",
            "extended": int(rec.frame.can_id.extended),
            "dlc": rec.frame.dlc,
            "data_hex": rec.frame.data.hex(),
            "decode_kind": rec.decode_kind,
            "decode_text": rec.decode_text,
        }

    def export(self, fmt: str, path) -> None:
        if not self._records:
            raise EmptyRecording("nothing recorded")
        if fmt == "csv":
            with open(path, "w", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=self.CSV_COLUMNS)
                writer.writeheader()
                for rec in self._records:
                    writer.writerow(self._row(rec))
        elif fmt == "jsonl":
            with open(path, "w") as f:
                for rec in self._records:
                    f.write(json.dumps(self._row(rec), sort_keys=True) + "\n")
        else:
            raise TraceError(f"unknown export format {fmt!r}")


def capture(
    recording: Recording,
    predicate: Callable[[TraceRecord], bool],
    pre_ms: float,
    post_ms: float,
) -> list[TraceRecord]:
    """Records within [t_fire - pre, t_fire + post], both ends inclusive."""
    if pre_ms < 0 or post_ms < 0:
        raise TraceError("pre/post must be non-negative")
    records = recording.records()
    t_fire = None
    for rec in records:
        if predicate(rec):
            t_fire = rec.t_ns
            break
    if t_fire is None:
        raise NeverFired("trigger predicate never matched")
    lo = t_fire - int(pre_ms * 1_000_000)
    hi = t_fire + int(post_ms * 1_000_000)
    return [r for r in records if lo <= r.t_ns <= hi]


# ---------------------------------------------------------------------------
# Channels


@dataclass
class _Channel:
    name: str
    unit: str
    # None for sampled channels; for computed ones: op in {product,sum,scale}
    op: Optional[str] = None
    inputs: tuple[str, ...] = ()
    factor: float = 1.0
    samples: list[tuple[int, float]] = field(default_factory=list)


class ChannelSet:
    """Sampled channels fed from DID polls plus computed derivations.

    Computed channels form a DAG and evaluate over the latest sample at
    or before t of each input (no interpolation).
    """

    OPS = ("product", "sum", "scale")

    def __init__(self):
        self._channels: dict[str, _Channel] = {}

    def define_sampled(self, name: str, unit: str = "") -> None:
        self._channels[name] = _Channel(name, unit)

    def define_computed(
        self,
        name: str,
        op: str,
        inputs: Iterable[str],
        unit: str = "",
        factor: float = 1.0,
    ) -> None:
        if op not in self.OPS:
            raise TraceError(f"unknown channel op {op!r}")
        ch = _Channel(name, unit, op, tuple(inputs), factor)
        self._channels[name] = ch
        try:
            self._check_acyclic(name)
        except CycleDetected:
            del self._channels[name]
            raise

    def _check_acyclic(self, root: str) -> None:
        seen: set[str] = set()

        def visit(name: str, stack: set[str]) -> None:
            if name in stack:
                raise CycleDetected(f"channel {name!r} depends on itself")
            if name in seen:
                return
            seen.add(name)
            ch = self._channels.get(name)
            if ch is not None and ch.op is not None:
                for dep in ch.inputs:
                    visit(dep, stack | {name})

        visit(root, set())

    def add_sample(self, name: str, t_ns: int, value: float) -> None:
        self._channels[name].samples.append((t_ns, value))

    def _latest_at(self, name: str, t_ns: int) -> float:
        ch = self._channels[name]
        if ch.op is not None:
            return self.eval_computed(name, t_ns)
        value = None
        for t, v in ch.samples:
            if t > t_ns:
                break
            value = v
        if value is None:
            raise MissingInput(f"channel {name!r} has no sample at or before t={t_ns}")
        return value

    def eval_computed(self, name: str, t_ns: int) -> float:
        ch = self._channels[name]
        if ch.op is None:
            raise TraceError(f"{name!r} is not a computed channel")
        values = [self._latest_at(dep, t_ns) for dep in ch.inputs]
        if not values:
            raise MissingInput(f"computed channel {name!r} has no inputs")
        if ch.op == "product":
            out = 1.0
            for v in values:
                out *= v
            return out
        if ch.op == "sum":
            return sum(values)
        return values[0] * ch.factor  # scale

    def unit(self, name: str) -> str:
        return self._channels[name].unit


# ---------------------------------------------------------------------------
# Frame decode for the trace view


def _decode_uds(payload: bytes, direction: str) -> str:
    if not payload:
        return ""
    if direction == DIR_ECU_TO_TESTER:
        if payload[0] == codec.NEGATIVE_SID and len(payload) >= 3:
            name = codec.service_name(payload[1])
            try:
                nrc = codec.Nrc(payload[2]).short_name
            except ValueError:
                nrc = f"NRC 0x{payload[2]:02X}"
            return f"{name} negative: {nrc}"
        sid = payload[0] - codec.POSITIVE_OFFSET
        text = f"{codec.service_name(sid)} positive"
        if sid == codec.SID_READ_DTC and len(payload) >= 3:
            dtcs = []
            body = payload[3:]
            while len(body) >= 4:
                dtcs.append(codec.format_dtc(codec.Dtc(bytes(body[:3]), body[3])))
                body = body[4:]
            if dtcs:
                text += " " + " ".join(dtcs)
        return text
    return f"{codec.service_name(payload[0])} request"


def describe_frame(frame: CanFrame, direction: str) -> tuple[str, str]:
    """(decode_kind, decode_text) for one frame in the trace window."""
    data = frame.data
    if not data:
        return "", ""
    pci = data[0] >> 4
    if pci == 0x0:
        length = data[0] & 0x0F
        if 1 <= length <= 7 and len(data) > length:
            kind = "response" if direction == DIR_ECU_TO_TESTER else "request"
            return kind, _decode_uds(data[1 : 1 + length], direction)
        return "isotp", "malformed single frame"
    if pci == 0x1:
        length = ((data[0] & 0x0F) << 8) | (data[1] if len(data) > 1 else 0)
        return "isotp", f"first frame, {length} bytes"
    if pci == 0x2:
        return "isotp", f"consecutive frame SN {data[0] & 0x0F}"
    if pci == 0x3:
        return "isotp", f"flow control status {data[0] & 0x0F}"
    return "", ""
