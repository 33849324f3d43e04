"""Alteration testing: systematic mutation of length bytes, sub-function
bytes (with and without the suppress bit) and DLC across services in the
default and extended sessions, judged against a stateless NRC oracle.

The oracle never consults ECU state: it evaluates the mutated wire bytes
against the static service grammar and the configured session matrix,
assuming a fresh server (nothing unlocked, no transfer in progress).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .canbus import CanFrame
from .codec import Nrc, SERVICE_TABLE
from .ecu import EcuConfig
from .isotp import DEFAULT_PAD, segment
from .sim import World

MS_NS = 1_000_000

# Mutation kinds
SF_LENGTH_NIBBLE = "sf_length_nibble"
RECORD_TRUNCATE_OR_PAD = "record_truncate_or_pad"
SUB_FUNCTION_VALUE = "sub_function_value"
SPR_BIT = "spr_bit"
DLC = "dlc"


class ConformanceError(Exception):
    pass


class HarnessTransportFailure(ConformanceError):
    pass


@dataclass(frozen=True)
class Mutation:
    kind: str
    value: int  # delta, new sub value, 1/0 for SPR set/clear, or new DLC

    def describe(self) -> str:
        if self.kind in (SF_LENGTH_NIBBLE, RECORD_TRUNCATE_OR_PAD):
            return f"{self.kind}({self.value:+d})"
        if self.kind == SPR_BIT:
            return f"{self.kind}({'set' if self.value else 'clear'})"
        return f"{self.kind}(0x{self.value:02X})"


@dataclass(frozen=True)
class TestCase:
    session: int  # active session the case runs in
    base: bytes
    mutation: Optional[Mutation] = None

    @property
    def sid(self) -> int:
        return self.base[0]

    def describe(self) -> str:
        mut = self.mutation.describe() if self.mutation else "control"
        return (
            f"{codec.service_name(self.sid)}/"
            f"{codec.SESSION_NAMES[self.session]}/{mut}"
        )


@dataclass(frozen=True)
class Verdict:
    kind: str  # "positive" | "negative" | "silence"
    nrc: Optional[Nrc] = None
    reason: str = ""

    def __eq__(self, other) -> bool:
        if not isinstance(other, Verdict):
            return NotImplemented
        return self.kind == other.kind and self.nrc == other.nrc

    def __hash__(self) -> int:
        return hash((self.kind, self.nrc))

    def describe(self) -> str:
        if self.kind == "negative":
            return f"negative(0x{int(self.nrc):02X})"
        if self.reason:
            return f"{self.kind}({self.reason})"
        return self.kind


POSITIVE = Verdict("positive")


def negative(nrc: Nrc) -> Verdict:
    return Verdict("negative", nrc)


def silence(reason: str = "") -> Verdict:
    return Verdict("silence", reason=reason)


# ---------------------------------------------------------------------------
# Case generation


def base_requests(cfg: EcuConfig) -> dict[int, bytes]:
    """One valid request per supported service, built from the config."""
    bases: dict[int, bytes] = {}
    read_did = min(cfg.dids)
    free_did = min(
        (d for d, s in cfg.dids.items() if s.write_level is None),
        default=None,
    )
    for sid in sorted(cfg.all_services()):
        if sid == codec.SID_SESSION_CONTROL:
            bases[sid] = bytes([sid, codec.SESSION_EXTENDED])
        elif sid == codec.SID_TESTER_PRESENT:
            bases[sid] = bytes([sid, 0x00])
        elif sid == codec.SID_SECURITY_ACCESS:
            bases[sid] = bytes([sid, cfg.security_levels[0].level])
        elif sid == codec.SID_READ_DID:
            bases[sid] = bytes([sid]) + read_did.to_bytes(2, "big")
        elif sid == codec.SID_WRITE_DID:
            if free_did is None:
                continue
            width = cfg.dids[free_did].width
            bases[sid] = bytes([sid]) + free_did.to_bytes(2, "big") + b"\x00" * width
        elif sid == codec.SID_READ_DTC:
            bases[sid] = bytes([sid, 0x02, 0x09])
        elif sid == codec.SID_CLEAR_DTC:
            bases[sid] = bytes([sid, 0xFF, 0xFF, 0xFF])
    return bases


def _unknown_sub(cfg: EcuConfig, sid: int) -> int:
    known = cfg.known_subs(sid)
    for v in range(0x55, 0x7F):
        if v not in known:
            return v
    raise ConformanceError("no unknown sub-function value available")


def sub_value_targets(cfg: EcuConfig, sid: int) -> list[int]:
    """Two mutation targets: a service-specific 'interesting' value and a
    guaranteed-unknown one."""
    interesting = {
        codec.SID_SESSION_CONTROL: codec.SESSION_PROGRAMMING,
        codec.SID_TESTER_PRESENT: 0x01,
        codec.SID_SECURITY_ACCESS: cfg.security_levels[0].level + 1
        if cfg.security_levels
        else 0x02,
        codec.SID_READ_DTC: 0x04,
    }
    return [interesting.get(sid, 0x01), _unknown_sub(cfg, sid)]


MATRIX_SESSIONS = (codec.SESSION_DEFAULT, codec.SESSION_EXTENDED)


def generate_matrix(cfg: EcuConfig) -> list[TestCase]:
    bases = base_requests(cfg)
    cases: list[TestCase] = []
    for session in MATRIX_SESSIONS:
        for sid in sorted(bases):
            base = bases[sid]
            implied_dlc = 1 + len(base)  # PCI byte + single-frame payload
            cases.append(TestCase(session, base, None))
            for delta in (+1, -1):
                cases.append(TestCase(session, base, Mutation(SF_LENGTH_NIBBLE, delta)))
            for delta in (+1, -1):
                cases.append(
                    TestCase(session, base, Mutation(RECORD_TRUNCATE_OR_PAD, delta))
                )
            for dlc in (implied_dlc - 1, implied_dlc):
                cases.append(TestCase(session, base, Mutation(DLC, dlc)))
            if SERVICE_TABLE[sid].has_sub_function:
                for target in sub_value_targets(cfg, sid):
                    cases.append(
                        TestCase(session, base, Mutation(SUB_FUNCTION_VALUE, target))
                    )
                for bit in (1, 0):
                    cases.append(TestCase(session, base, Mutation(SPR_BIT, bit)))
    return cases


# ---------------------------------------------------------------------------
# Mutated wire construction


def build_frames(case: TestCase, cfg: EcuConfig, pad: int = DEFAULT_PAD) -> list[CanFrame]:
    raw = bytearray(case.base)
    m = case.mutation
    if m is not None:
        if m.kind == SUB_FUNCTION_VALUE:
            raw[1] = (raw[1] & codec.SUPPRESS_BIT) | (m.value & 0x7F)
        elif m.kind == SPR_BIT:
            if m.value:
                raw[1] |= codec.SUPPRESS_BIT
            else:
                raw[1] &= ~codec.SUPPRESS_BIT & 0xFF
        elif m.kind == RECORD_TRUNCATE_OR_PAD:
            if m.value > 0:
                raw.extend([pad] * m.value)
            else:
                del raw[m.value :]
    blocks = segment(bytes(raw), pad)
    frames: list[bytearray] = [bytearray(b) for b in blocks]
    if m is not None:
        if m.kind == SF_LENGTH_NIBBLE:
            nibble = (frames[0][0] & 0x0F) + m.value
            if not 0 <= nibble <= 0x0F:
                raise ConformanceError("length-nibble mutation out of range")
            frames[0][0] = (frames[0][0] & 0xF0) | nibble
        elif m.kind == DLC:
            frames[0] = frames[0][: m.value]
    from .canbus import CanId

    req = CanId(cfg.request_id)
    return [CanFrame(req, bytes(f)) for f in frames]


# ---------------------------------------------------------------------------
# Oracle


def expected_verdict(case: TestCase, cfg: EcuConfig) -> Verdict:
    frame = build_frames(case, cfg)[0]
    return judge_frame(frame.data, case.session, cfg)


def judge_frame(data: bytes, session: int, cfg: EcuConfig) -> Verdict:
    """Stateless verdict for a single-frame request against a fresh server."""
    if not data:
        return silence("empty frame")
    declared = data[0] & 0x0F
    if (data[0] >> 4) != 0 or declared == 0 or declared > 7:
        return silence("not a valid single frame")
    if len(data) < 1 + declared:
        return silence("transport discard: DLC below PCI-implied length")
    pdu = data[1 : 1 + declared]
    return judge_pdu(pdu, session, cfg)


def judge_pdu(pdu: bytes, session: int, cfg: EcuConfig) -> Verdict:
    sid = pdu[0]
    if sid not in SERVICE_TABLE or sid not in cfg.all_services():
        return negative(Nrc.SERVICE_NOT_SUPPORTED)
    if sid not in cfg.services_in_session(session):
        return negative(Nrc.SERVICE_NOT_IN_SESSION)
    info = SERVICE_TABLE[sid]
    spr = False
    sub: Optional[int] = None
    record = pdu[1:]
    if info.has_sub_function:
        if len(pdu) < 2:
            return negative(Nrc.INCORRECT_LENGTH)
        sub = pdu[1] & 0x7F
        spr = bool(pdu[1] & codec.SUPPRESS_BIT)
        record = pdu[2:]
        if sub not in cfg.known_subs(sid):
            return negative(Nrc.SUB_FUNCTION_NOT_SUPPORTED)
        if sub not in cfg.subs_in_session(sid, session):
            return negative(Nrc.SUB_FUNCTION_NOT_IN_SESSION)
    if not info.length_ok(sub, record):
        return negative(Nrc.INCORRECT_LENGTH)
    nrc = _semantic_nrc(sid, sub, record, cfg)
    if nrc is not None:
        return negative(nrc)
    if spr:
        return silence("suppressed positive response")
    return POSITIVE


def _semantic_nrc(
    sid: int, sub: Optional[int], record: bytes, cfg: EcuConfig
) -> Optional[Nrc]:
    """Service-level NRCs predictable from the config alone."""
    if sid == codec.SID_READ_DID:
        dids = [
            int.from_bytes(record[i : i + 2], "big") for i in range(0, len(record), 2)
        ]
        if any(d not in cfg.dids for d in dids):
            return Nrc.REQUEST_OUT_OF_RANGE
    elif sid == codec.SID_WRITE_DID:
        did = int.from_bytes(record[:2], "big")
        spec = cfg.dids.get(did)
        if spec is None:
            return Nrc.REQUEST_OUT_OF_RANGE
        if spec.write_level is not None:
            return Nrc.SECURITY_ACCESS_DENIED  # fresh server: nothing unlocked
        if len(record[2:]) != spec.width:
            return Nrc.INCORRECT_LENGTH
    elif sid == codec.SID_CLEAR_DTC:
        group = int.from_bytes(record[:3], "big")
        if group not in cfg.dtc_groups:
            return Nrc.REQUEST_OUT_OF_RANGE
    elif sid == codec.SID_SECURITY_ACCESS and sub is not None and sub % 2 == 0:
        return Nrc.REQUEST_SEQUENCE_ERROR  # sendKey with no seed in flight
    elif sid == codec.SID_READ_DTC and sub == 0x04:
        wanted = bytes(record[:3])
        if not any(r.dtc.raw == wanted for r in cfg.initial_dtcs):
            return Nrc.REQUEST_OUT_OF_RANGE
    return None


# ---------------------------------------------------------------------------
# Runner


@dataclass(frozen=True)
class CaseResult:
    case: TestCase
    expected: Verdict
    observed: Verdict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "case": self.case.describe(),
            "service": f"0x{self.case.sid:02X}",
            "session": codec.SESSION_NAMES[self.case.session],
            "mutation": self.case.mutation.describe() if self.case.mutation else "control",
            "base_hex": self.case.base.hex(),
            "expected": self.expected.describe(),
            "observed": self.observed.describe(),
            "pass": self.passed,
        }


@dataclass
class Report:
    results: list[CaseResult] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def passed(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def failed(self) -> int:
        return self.total - self.passed

    def summary(self) -> dict[tuple[str, str, str], tuple[int, int]]:
        out: dict[tuple[str, str, str], tuple[int, int]] = {}
        for r in self.results:
            key = (
                codec.service_name(r.case.sid),
                r.case.mutation.kind if r.case.mutation else "control",
                codec.SESSION_NAMES[r.case.session],
            )
            p, f = out.get(key, (0, 0))
            out[key] = (p + r.passed, f + (not r.passed))
        return out

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for r in self.results:
                f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    def format_table(self) -> str:
        lines = [f"{'service':28} {'mutation':26} {'session':9} {'pass':>5} {'fail':>5}"]
        for (svc, kind, sess), (p, f) in sorted(self.summary().items()):
            lines.append(f"{svc:28} {kind:26} {sess:9} {p:>5} {f:>5}")
        lines.append(f"total: {self.passed}/{self.total} passed")
        return "\n".join(lines)


class _Probe:
    """Raw OBD2-port node: injects frames, records every response frame."""

    def __init__(self, world: World):
        self.world = world
        self.port = world.attach_obd2_port()
        self.frames: list[tuple[CanFrame, int]] = []
        world.add_node(self)

    def poll(self, now_ns: int) -> None:
        pass

    def on_frame(self, frame: CanFrame, now_ns: int) -> None:
        self.frames.append((frame, now_ns))


def _observe(
    probe: _Probe,
    p2_ms: int = 150,
    p2_star_ms: int = 5000,
) -> tuple[Verdict, int]:
    """Drive the world until a final response or a full window of silence.

    Returns the observed verdict and the number of response frames seen.
    """
    world = probe.world
    resp_value = world.cfg.response_id
    deadline = world.now_ns + p2_ms * MS_NS
    consumed = 0
    count = 0
    while world.now_ns < deadline:
        world.step()
        while consumed < len(probe.frames):
            frame, _t = probe.frames[consumed]
            consumed += 1
            if frame.can_id.value != resp_value:
                continue
            count += 1
            data = frame.data
            declared = data[0] & 0x0F if data else 0
            if not data or (data[0] >> 4) != 0 or not 1 <= declared <= 7:
                raise HarnessTransportFailure("unparseable response frame")
            pdu = data[1 : 1 + declared]
            if pdu[0] == codec.NEGATIVE_SID:
                nrc_byte = pdu[2] if len(pdu) >= 3 else 0
                if nrc_byte == int(Nrc.RESPONSE_PENDING):
                    deadline = world.now_ns + p2_star_ms * MS_NS
                    continue
                try:
                    return negative(Nrc(nrc_byte)), count
                except ValueError as exc:
                    raise HarnessTransportFailure(f"NRC 0x{nrc_byte:02X}") from exc
            return POSITIVE, count
    return silence("no response within the window"), count


def run_case(
    case: TestCase,
    cfg: EcuConfig,
    length_check: bool = True,
) -> CaseResult:
    world = World(cfg, length_check=length_check)
    probe = _Probe(world)
    if case.session != codec.SESSION_DEFAULT:
        for f in build_frames(
            TestCase(codec.SESSION_DEFAULT, bytes([codec.SID_SESSION_CONTROL, case.session])),
            cfg,
        ):
            probe.port.send(f)
        verdict, _ = _observe(probe)
        if verdict != POSITIVE:
            raise HarnessTransportFailure(
                f"session setup failed: {verdict.describe()}"
            )
        probe.frames.clear()
    for frame in build_frames(case, cfg):
        probe.port.send(frame)
    observed, _count = _observe(probe)
    expected = expected_verdict(case, cfg)
    return CaseResult(case, expected, observed, observed == expected)


def run(
    cases: list[TestCase],
    cfg: EcuConfig,
    length_check: bool = True,
) -> Report:
    report = Report()
    for case in cases:
        report.results.append(run_case(case, cfg, length_check))
    return report
