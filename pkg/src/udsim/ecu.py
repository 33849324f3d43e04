"""Configurable simulated ECU.

Session state machine with S3 timeout, seed-key security access with
lockout, a DTC store with fault-time snapshots, DID-backed signal models
and an optional gateway filter that hides raw CAN traffic from the OBD2
port while letting diagnostics through.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec
from .canbus import CanFrame, CanId
from .codec import (
    Dtc,
    NegativeResponse,
    Nrc,
    PositiveResponse,
    Request,
    Response,
    SERVICE_TABLE,
    SESSION_DEFAULT,
    SubFunction,
)

MS_NS = 1_000_000


class EcuConfigError(Exception):
    pass


def _to_int(v) -> int:
    if isinstance(v, str):
        return int(v, 0)
    return int(v)


# Registered seed-to-key transforms. The default is the bitwise
# complement of the 4-byte seed; xor5a exists to exercise pluggability.
KEY_FUNCTIONS: dict[str, Callable[[bytes], bytes]] = {
    "complement": lambda seed: bytes((~b) & 0xFF for b in seed),
    "xor5a": lambda seed: bytes(b ^ 0x5A for b in seed),
}


@dataclass(frozen=True)
class SignalModel:
    """Evaluates one DID's raw value as a pure function of simulated time."""

    kind: str  # constant | ramp | sinusoid | stored
    raw: int = 0
    base: float = 0.0
    slope_per_s: float = 0.0
    mean: float = 0.0
    amplitude: float = 0.0
    period_ms: float = 1000.0
    stored: bytes = b""

    def eval_raw(self, t_ns: int) -> int:
        t_s = t_ns / 1e9
        if self.kind == "constant":
            return self.raw
        if self.kind == "ramp":
            return round(self.base + self.slope_per_s * t_s)
        if self.kind == "sinusoid":
            phase = 2 * math.pi * (t_ns / (self.period_ms * 1e6))
            return round(self.mean + self.amplitude * math.sin(phase))
        raise EcuConfigError(f"model kind {self.kind!r} has no numeric evaluation")


@dataclass(frozen=True)
class DidSpec:
    did: int
    name: str
    model: SignalModel
    width: int
    factor: float = 1.0
    offset: float = 0.0
    unit: str = ""
    write_level: Optional[int] = None  # None = writable without unlock
    snapshot: bool = False

    def value_bytes(self, t_ns: int, stored_override: Optional[bytes]) -> bytes:
        if stored_override is not None:
            return stored_override
        if self.model.kind == "stored":
            return self.model.stored
        raw = max(0, min(self.model.eval_raw(t_ns), (1 << (8 * self.width)) - 1))
        return raw.to_bytes(self.width, "big")

    def scaled(self, value: bytes) -> float:
        return int.from_bytes(value, "big") * self.factor + self.offset


@dataclass(frozen=True)
class DtcRecord:
    dtc: Dtc
    snapshot: tuple[tuple[int, bytes], ...] = ()


@dataclass(frozen=True)
class SecurityLevel:
    level: int  # odd requestSeed sub-function value
    key_fn: str = "complement"

    def __post_init__(self):
        if self.level % 2 != 1 or not 0 < self.level < 0x7E:
            raise EcuConfigError("security level must be the odd requestSeed sub value")
        if self.key_fn not in KEY_FUNCTIONS:
            raise EcuConfigError(f"unknown key function {self.key_fn!r}")


@dataclass
class EcuConfig:
    name: str = "ecu"
    request_id: int = 0x7E0
    response_id: int = 0x7E8
    sessions: dict[int, frozenset[int]] = field(default_factory=dict)
    session_subs: dict[int, dict[int, frozenset[int]]] = field(default_factory=dict)
    security_levels: tuple[SecurityLevel, ...] = ()
    dids: dict[int, DidSpec] = field(default_factory=dict)
    initial_dtcs: tuple[DtcRecord, ...] = ()
    dtc_groups: frozenset[int] = frozenset({0xFFFFFF})
    s3_ms: int = 5000
    p2_ms: int = 50
    p2_star_ms: int = 5000
    max_attempts: int = 3
    lockout_delay_ms: int = 10000
    work_delays_ms: dict[int, int] = field(default_factory=dict)
    gateway_mode: bool = False
    rng_seed: int = 0
    max_response_length: int = 4095

    def __post_init__(self):
        if not self.sessions:
            self.sessions = {SESSION_DEFAULT: frozenset(SERVICE_TABLE)}
        if SESSION_DEFAULT not in self.sessions:
            raise EcuConfigError("the default session must always be supported")
        for sess, services in self.sessions.items():
            for sid in services:
                if sid not in SERVICE_TABLE:
                    raise EcuConfigError(f"service 0x{sid:02X} not in the service table")

    # -- table lookups shared with the conformance oracle -------------------

    def services_in_session(self, session: int) -> frozenset[int]:
        return self.sessions.get(session, frozenset())

    def all_services(self) -> frozenset[int]:
        out: set[int] = set()
        for services in self.sessions.values():
            out |= services
        return frozenset(out)

    def known_subs(self, sid: int) -> frozenset[int]:
        if sid == codec.SID_SESSION_CONTROL:
            return frozenset(self.sessions)
        if sid == codec.SID_SECURITY_ACCESS:
            subs: set[int] = set()
            for lvl in self.security_levels:
                subs |= {lvl.level, lvl.level + 1}
            return frozenset(subs)
        info = SERVICE_TABLE[sid]
        return info.known_subs or frozenset()

    def subs_in_session(self, sid: int, session: int) -> frozenset[int]:
        per_service = self.session_subs.get(sid)
        if per_service is not None and session in per_service:
            return per_service[session]
        return self.known_subs(sid)

    def security_level_for_sub(self, sub: int) -> Optional[SecurityLevel]:
        seed_sub = sub if sub % 2 == 1 else sub - 1
        for lvl in self.security_levels:
            if lvl.level == seed_sub:
                return lvl
        return None

    # -- JSON --------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "EcuConfig":
        sessions = {
            codec.SESSION_BY_NAME[name]: frozenset(_to_int(s) for s in services)
            for name, services in doc.get("sessions", {}).items()
        }
        session_subs = {
            _to_int(sid): {
                codec.SESSION_BY_NAME[name]: frozenset(_to_int(s) for s in subs)
                for name, subs in per_session.items()
            }
            for sid, per_session in doc.get("session_subs", {}).items()
        }
        levels = tuple(
            SecurityLevel(_to_int(d["level"]), d.get("key_fn", "complement"))
            for d in doc.get("security_levels", [])
        )
        dids: dict[int, DidSpec] = {}
        for did_key, d in doc.get("dids", {}).items():
            did = _to_int(did_key)
            m = d["model"]
            kind = m["kind"]
            stored = b""
            if kind == "stored":
                stored = (
                    m["ascii"].encode() if "ascii" in m else bytes.fromhex(m["hex"])
                )
            model = SignalModel(
                kind=kind,
                raw=_to_int(m.get("raw", 0)),
                base=float(m.get("base", 0.0)),
                slope_per_s=float(m.get("slope_per_s", 0.0)),
                mean=float(m.get("mean", 0.0)),
                amplitude=float(m.get("amplitude", 0.0)),
                period_ms=float(m.get("period_ms", 1000.0)),
                stored=stored,
            )
            width = int(d.get("width", len(stored) or 2))
            if kind == "stored" and len(stored) != width:
                raise EcuConfigError(f"DID {did_key}: stored value length != width")
            wl = d.get("write_level")
            dids[did] = DidSpec(
                did=did,
                name=d.get("name", did_key),
                model=model,
                width=width,
                factor=float(d.get("factor", 1.0)),
                offset=float(d.get("offset", 0.0)),
                unit=d.get("unit", ""),
                write_level=None if wl is None else _to_int(wl),
                snapshot=bool(d.get("snapshot", False)),
            )
        records = []
        for d in doc.get("dtcs", []):
            raw = codec.parse_dtc_raw(d["dtc"])
            snap = tuple(
                (_to_int(k), bytes.fromhex(v)) for k, v in d.get("snapshot", {}).items()
            )
            for did, _ in snap:
                if did not in dids:
                    raise EcuConfigError(f"snapshot DID 0x{did:04X} not in DID map")
            records.append(DtcRecord(Dtc(raw, _to_int(d.get("status", 0))), snap))
        return cls(
            name=doc.get("name", "ecu"),
            request_id=_to_int(doc.get("request_id", 0x7E0)),
            response_id=_to_int(doc.get("response_id", 0x7E8)),
            sessions=sessions,
            session_subs=session_subs,
            security_levels=levels,
            dids=dids,
            initial_dtcs=tuple(records),
            dtc_groups=frozenset(_to_int(g) for g in doc.get("dtc_groups", ["0xFFFFFF"])),
            s3_ms=int(doc.get("s3_ms", 5000)),
            p2_ms=int(doc.get("p2_ms", 50)),
            p2_star_ms=int(doc.get("p2_star_ms", 5000)),
            max_attempts=int(doc.get("max_attempts", 3)),
            lockout_delay_ms=int(doc.get("lockout_delay_ms", 10000)),
            work_delays_ms={
                _to_int(k): int(v) for k, v in doc.get("work_delays_ms", {}).items()
            },
            gateway_mode=bool(doc.get("gateway_mode", False)),
            rng_seed=_to_int(doc.get("rng_seed", 0)),
            max_response_length=int(doc.get("max_response_length", 4095)),
        )

    @classmethod
    def from_file(cls, path) -> "EcuConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class EcuState:
    active_session: int = SESSION_DEFAULT
    s3_deadline: Optional[int] = None
    unlocked_levels: set[int] = field(default_factory=set)
    pending_seed: Optional[tuple[int, bytes]] = None  # (level, seed)
    failed_attempts: int = 0
    lockout_until: Optional[int] = None
    dtc_store: list[DtcRecord] = field(default_factory=list)
    stored_values: dict[int, bytes] = field(default_factory=dict)


class Ecu:
    """One sequential diagnostic server instance."""

    def __init__(self, cfg: EcuConfig, length_check: bool = True):
        self.cfg = cfg
        self.length_check = length_check
        self.rng = random.Random(cfg.rng_seed)
        self.state = EcuState(dtc_store=list(cfg.initial_dtcs))

    # -- session plumbing ---------------------------------------------------

    def _enter_session(self, session: int, now_ns: int) -> None:
        st = self.state
        st.active_session = session
        st.unlocked_levels.clear()
        st.pending_seed = None
        if session == SESSION_DEFAULT:
            st.s3_deadline = None
        else:
            st.s3_deadline = now_ns + self.cfg.s3_ms * MS_NS

    def _refresh_s3(self, now_ns: int) -> None:
        if self.state.active_session != SESSION_DEFAULT:
            self.state.s3_deadline = now_ns + self.cfg.s3_ms * MS_NS

    def tick(self, now_ns: int) -> None:
        st = self.state
        if (
            st.active_session != SESSION_DEFAULT
            and st.s3_deadline is not None
            and now_ns >= st.s3_deadline
        ):
            self._enter_session(SESSION_DEFAULT, now_ns)
        if st.lockout_until is not None and now_ns >= st.lockout_until:
            st.lockout_until = None
            st.failed_attempts = 0

    # -- request handling ---------------------------------------------------

    def handle_request(self, raw: bytes, now_ns: int) -> Optional[Response]:
        resp, _ = self._handle(raw, now_ns)
        return resp

    def handle_payload(self, raw: bytes, now_ns: int) -> list[tuple[int, bytes]]:
        """(due_ns, response bytes) transmissions for one request payload.

        A service with a configured work delay beyond P2 answers NRC 0x78
        first and the final response when the work completes.
        """
        resp, executed = self._handle(raw, now_ns)
        if resp is None:
            return []
        wire = codec.encode_response(resp)
        sid = raw[0] if raw else 0
        delay_ms = self.cfg.work_delays_ms.get(sid)
        if executed and delay_ms is not None and delay_ms > self.cfg.p2_ms:
            pending = codec.encode_response(
                NegativeResponse(sid, Nrc.RESPONSE_PENDING)
            )
            return [
                (now_ns + self.cfg.p2_ms * MS_NS, pending),
                (now_ns + delay_ms * MS_NS, wire),
            ]
        return [(now_ns, wire)]

    def _handle(self, raw: bytes, now_ns: int) -> tuple[Optional[Response], bool]:
        if not raw:
            return None, False
        sid = raw[0]
        cfg = self.cfg
        if sid not in SERVICE_TABLE or sid not in cfg.all_services():
            return NegativeResponse(sid, Nrc.SERVICE_NOT_SUPPORTED), False
        session = self.state.active_session
        if sid not in cfg.services_in_session(session):
            return NegativeResponse(sid, Nrc.SERVICE_NOT_IN_SESSION), False
        info = SERVICE_TABLE[sid]
        sub: Optional[SubFunction] = None
        record = bytes(raw[1:])
        if info.has_sub_function:
            if len(raw) < 2:
                if self.length_check:
                    return NegativeResponse(sid, Nrc.INCORRECT_LENGTH), False
                sub = SubFunction(0)
            else:
                sub = SubFunction.from_wire(raw[1])
                record = bytes(raw[2:])
            if sub.value not in cfg.known_subs(sid):
                return NegativeResponse(sid, Nrc.SUB_FUNCTION_NOT_SUPPORTED), False
            if sub.value not in cfg.subs_in_session(sid, session):
                return NegativeResponse(sid, Nrc.SUB_FUNCTION_NOT_IN_SESSION), False
        if self.length_check and not info.length_ok(
            sub.value if sub else None, record
        ):
            return NegativeResponse(sid, Nrc.INCORRECT_LENGTH), False
        resp = self._dispatch(sid, sub, record, now_ns)
        positive = isinstance(resp, PositiveResponse)
        if positive and sid != codec.SID_SESSION_CONTROL:
            self._refresh_s3(now_ns)
        if positive and sub is not None and sub.suppress_positive_response:
            return None, True
        return resp, True

    def _dispatch(
        self, sid: int, sub: Optional[SubFunction], record: bytes, now_ns: int
    ) -> Response:
        if sid == codec.SID_SESSION_CONTROL:
            return self._session_control(sub.value, now_ns)
        if sid == codec.SID_TESTER_PRESENT:
            return PositiveResponse(sid, bytes([sub.value]))
        if sid == codec.SID_SECURITY_ACCESS:
            return self._security_access(sub.value, record, now_ns)
        if sid == codec.SID_READ_DID:
            return self._read_did(record, now_ns)
        if sid == codec.SID_WRITE_DID:
            return self._write_did(record)
        if sid == codec.SID_READ_DTC:
            return self._read_dtc(sub.value, record)
        if sid == codec.SID_CLEAR_DTC:
            return self._clear_dtc(record)
        return NegativeResponse(sid, Nrc.SERVICE_NOT_SUPPORTED)

    def _session_control(self, target: int, now_ns: int) -> Response:
        self._enter_session(target, now_ns)
        p2 = self.cfg.p2_ms
        p2_star_10ms = self.cfg.p2_star_ms // 10
        data = bytes([target]) + p2.to_bytes(2, "big") + p2_star_10ms.to_bytes(2, "big")
        return PositiveResponse(codec.SID_SESSION_CONTROL, data)

    def _security_access(self, sub: int, record: bytes, now_ns: int) -> Response:
        sid = codec.SID_SECURITY_ACCESS
        st = self.state
        if st.lockout_until is not None and now_ns < st.lockout_until:
            return NegativeResponse(sid, Nrc.REQUIRED_TIME_DELAY)
        level = self.cfg.security_level_for_sub(sub)
        if level is None:
            return NegativeResponse(sid, Nrc.SUB_FUNCTION_NOT_SUPPORTED)
        if sub % 2 == 1:  # requestSeed
            if level.level in st.unlocked_levels:
                return PositiveResponse(sid, bytes([sub]) + b"\x00" * 4)
            seed = self.rng.randbytes(4)
            while seed == b"\x00" * 4:
                seed = self.rng.randbytes(4)
            st.pending_seed = (level.level, seed)
            return PositiveResponse(sid, bytes([sub]) + seed)
        # sendKey
        pending = st.pending_seed
        st.pending_seed = None
        if pending is None or pending[0] != level.level:
            return NegativeResponse(sid, Nrc.REQUEST_SEQUENCE_ERROR)
        expected = KEY_FUNCTIONS[level.key_fn](pending[1])
        if record[:4] == expected:
            st.unlocked_levels.add(level.level)
            st.failed_attempts = 0
            return PositiveResponse(sid, bytes([sub]))
        st.failed_attempts += 1
        if st.failed_attempts >= self.cfg.max_attempts:
            st.lockout_until = now_ns + self.cfg.lockout_delay_ms * MS_NS
            return NegativeResponse(sid, Nrc.EXCEEDED_ATTEMPTS)
        return NegativeResponse(sid, Nrc.INVALID_KEY)

    def read_did_bytes(self, did: int, now_ns: int) -> bytes:
        spec = self.cfg.dids[did]
        return spec.value_bytes(now_ns, self.state.stored_values.get(did))

    def _read_did(self, record: bytes, now_ns: int) -> Response:
        sid = codec.SID_READ_DID
        usable = record[: len(record) - (len(record) % 2)]
        dids = [
            int.from_bytes(usable[i : i + 2], "big") for i in range(0, len(usable), 2)
        ]
        if not dids or any(d not in self.cfg.dids for d in dids):
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        out = bytearray()
        for did in dids:
            out += did.to_bytes(2, "big") + self.read_did_bytes(did, now_ns)
        if 1 + len(out) > self.cfg.max_response_length:
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        return PositiveResponse(sid, bytes(out))

    def _write_did(self, record: bytes) -> Response:
        sid = codec.SID_WRITE_DID
        if len(record) < 3:
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        did = int.from_bytes(record[:2], "big")
        value = record[2:]
        spec = self.cfg.dids.get(did)
        if spec is None:
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        if spec.write_level is not None and spec.write_level not in self.state.unlocked_levels:
            return NegativeResponse(sid, Nrc.SECURITY_ACCESS_DENIED)
        if self.length_check and len(value) != spec.width:
            return NegativeResponse(sid, Nrc.INCORRECT_LENGTH)
        self.state.stored_values[did] = bytes(value)
        return PositiveResponse(sid, record[:2])

    AVAILABILITY_MASK = 0x09  # testFailed | confirmed

    def _read_dtc(self, sub: int, record: bytes) -> Response:
        sid = codec.SID_READ_DTC
        store = self.state.dtc_store
        if sub == 0x02:
            mask = record[0] if record else 0xFF
            out = bytearray([sub, self.AVAILABILITY_MASK])
            for rec in store:
                if rec.dtc.status & mask:
                    out += rec.dtc.raw + bytes([rec.dtc.status])
            return PositiveResponse(sid, bytes(out))
        if sub == 0x04:
            if len(record) < 4:
                return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
            wanted = bytes(record[:3])
            number = record[3]
            for rec in store:
                if rec.dtc.raw == wanted:
                    out = bytearray([sub])
                    out += rec.dtc.raw + bytes([rec.dtc.status, number])
                    out.append(len(rec.snapshot))
                    for did, value in rec.snapshot:
                        out += did.to_bytes(2, "big")
                        out.append(len(value))
                        out += value
                    return PositiveResponse(sid, bytes(out))
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        if sub == 0x0A:
            out = bytearray([sub, self.AVAILABILITY_MASK])
            for rec in store:
                out += rec.dtc.raw + bytes([rec.dtc.status])
            return PositiveResponse(sid, bytes(out))
        return NegativeResponse(sid, Nrc.SUB_FUNCTION_NOT_SUPPORTED)

    def _clear_dtc(self, record: bytes) -> Response:
        sid = codec.SID_CLEAR_DTC
        if len(record) < 3:
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        group = int.from_bytes(record[:3], "big")
        if group not in self.cfg.dtc_groups:
            return NegativeResponse(sid, Nrc.REQUEST_OUT_OF_RANGE)
        if group == 0xFFFFFF:
            self.state.dtc_store.clear()
        else:
            family = (group >> 16) & 0xFF
            self.state.dtc_store = [
                r for r in self.state.dtc_store if r.dtc.raw[0] != family
            ]
        return PositiveResponse(sid)

    # -- faults -------------------------------------------------------------

    def inject_fault(self, dtc_raw: bytes, status: int, now_ns: int) -> DtcRecord:
        snap = tuple(
            (did, self.read_did_bytes(did, now_ns))
            for did, spec in sorted(self.cfg.dids.items())
            if spec.snapshot
        )
        rec = DtcRecord(Dtc(bytes(dtc_raw), status), snap)
        self.state.dtc_store.append(rec)
        return rec


def gateway_filter(cfg: EcuConfig, can_id: CanId) -> bool:
    """True if a frame with this id may cross the OBD2 port."""
    if not cfg.gateway_mode:
        return True
    return can_id.value in (cfg.request_id, cfg.response_id) and not can_id.extended
