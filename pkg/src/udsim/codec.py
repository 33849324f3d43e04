"""UDS PDU encoding/decoding and the shared service table.

Everything that needs to agree on wire bytes (ECU, tester, fuzz oracle,
trace decoder) goes through this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

SUPPRESS_BIT = 0x80
NEGATIVE_SID = 0x7F
POSITIVE_OFFSET = 0x40

# Service identifiers
SID_SESSION_CONTROL = 0x10
SID_CLEAR_DTC = 0x14
SID_READ_DTC = 0x19
SID_READ_DID = 0x22
SID_SECURITY_ACCESS = 0x27
SID_WRITE_DID = 0x2E
SID_TESTER_PRESENT = 0x3E

# Diagnostic sessions (sub-functions of 0x10)
SESSION_DEFAULT = 0x01
SESSION_PROGRAMMING = 0x02
SESSION_EXTENDED = 0x03

SESSION_NAMES = {
    SESSION_DEFAULT: "default",
    SESSION_PROGRAMMING: "programming",
    SESSION_EXTENDED: "extended",
}
SESSION_BY_NAME = {v: k for k, v in SESSION_NAMES.items()}


class CodecError(Exception):
    pass


class SubFunctionOutOfRange(CodecError):
    pass


class SidMismatch(CodecError):
    pass


class UnknownNrc(CodecError):
    pass


class TruncatedPdu(CodecError):
    pass


class Nrc(IntEnum):
    GENERAL_REJECT = 0x10
    SERVICE_NOT_SUPPORTED = 0x11
    SUB_FUNCTION_NOT_SUPPORTED = 0x12
    INCORRECT_LENGTH = 0x13
    CONDITIONS_NOT_CORRECT = 0x22
    REQUEST_SEQUENCE_ERROR = 0x24
    REQUEST_OUT_OF_RANGE = 0x31
    SECURITY_ACCESS_DENIED = 0x33
    INVALID_KEY = 0x35
    EXCEEDED_ATTEMPTS = 0x36
    REQUIRED_TIME_DELAY = 0x37
    RESPONSE_PENDING = 0x78
    SUB_FUNCTION_NOT_IN_SESSION = 0x7E
    SERVICE_NOT_IN_SESSION = 0x7F

    @property
    def short_name(self) -> str:
        return _NRC_NAMES[int(self)]


_NRC_NAMES = {
    0x10: "generalReject",
    0x11: "serviceNotSupported",
    0x12: "subFunctionNotSupported",
    0x13: "incorrectMessageLengthOrInvalidFormat",
    0x22: "conditionsNotCorrect",
    0x24: "requestSequenceError",
    0x31: "requestOutOfRange",
    0x33: "securityAccessDenied",
    0x35: "invalidKey",
    0x36: "exceededNumberOfAttempts",
    0x37: "requiredTimeDelayNotExpired",
    0x78: "responsePending",
    0x7E: "subFunctionNotSupportedInActiveSession",
    0x7F: "serviceNotSupportedInActiveSession",
}


@dataclass(frozen=True)
class SubFunction:
    value: int
    suppress_positive_response: bool = False

    def __post_init__(self):
        if not 0 <= self.value <= 0x7F:
            raise SubFunctionOutOfRange(f"sub-function value 0x{self.value:02X} > 0x7F")

    @property
    def wire_byte(self) -> int:
        return self.value | (SUPPRESS_BIT if self.suppress_positive_response else 0)

    @classmethod
    def from_wire(cls, byte: int) -> "SubFunction":
        return cls(byte & 0x7F, bool(byte & SUPPRESS_BIT))


@dataclass(frozen=True)
class Request:
    sid: int
    sub: Optional[SubFunction] = None
    data: bytes = b""

    @property
    def suppress(self) -> bool:
        return self.sub is not None and self.sub.suppress_positive_response


@dataclass(frozen=True)
class PositiveResponse:
    sid: int  # request SID, not the +0x40 wire byte
    data: bytes = b""


@dataclass(frozen=True)
class NegativeResponse:
    request_sid: int
    nrc: Nrc


Response = PositiveResponse | NegativeResponse


@dataclass(frozen=True)
class ServiceInfo:
    """Static grammar for one supported service."""

    sid: int
    name: str
    has_sub_function: bool
    # Known sub-function values; None for services without sub-functions.
    known_subs: Optional[frozenset[int]] = None
    # length_ok(sub_value, record_data) for the full post-sub data record;
    # for sub-less services sub_value is None.
    length_ok: Callable[[Optional[int], bytes], bool] = field(
        default=lambda sub, data: True
    )


def _len_eq(n):
    return lambda sub, data: len(data) == n


def _rdbi_len_ok(sub, data) -> bool:
    return len(data) >= 2 and len(data) % 2 == 0


def _wdbi_len_ok(sub, data) -> bool:
    return len(data) >= 3  # DID + at least one value byte; exact width checked later


def _read_dtc_len_ok(sub, data) -> bool:
    if sub == 0x02:
        return len(data) == 1  # status mask
    if sub == 0x04:
        return len(data) == 4  # DTC (3) + record number
    if sub == 0x0A:
        return len(data) == 0
    return False


def _security_len_ok(sub, data) -> bool:
    if sub is None:
        return False
    if sub % 2 == 1:  # requestSeed
        return len(data) == 0
    return len(data) == 4  # sendKey carries the 4-byte key


SERVICE_TABLE: dict[int, ServiceInfo] = {
    SID_SESSION_CONTROL: ServiceInfo(
        SID_SESSION_CONTROL,
        "DiagnosticSessionControl",
        True,
        frozenset({SESSION_DEFAULT, SESSION_PROGRAMMING, SESSION_EXTENDED}),
        _len_eq(0),
    ),
    SID_SECURITY_ACCESS: ServiceInfo(
        SID_SECURITY_ACCESS,
        "SecurityAccess",
        True,
        None,  # known subs depend on configured levels; resolved by the ECU config
        _security_len_ok,
    ),
    SID_TESTER_PRESENT: ServiceInfo(
        SID_TESTER_PRESENT,
        "TesterPresent",
        True,
        frozenset({0x00}),
        _len_eq(0),
    ),
    SID_READ_DID: ServiceInfo(
        SID_READ_DID, "ReadDataByIdentifier", False, None, _rdbi_len_ok
    ),
    SID_WRITE_DID: ServiceInfo(
        SID_WRITE_DID, "WriteDataByIdentifier", False, None, _wdbi_len_ok
    ),
    SID_READ_DTC: ServiceInfo(
        SID_READ_DTC,
        "ReadDTCInformation",
        True,
        frozenset({0x02, 0x04, 0x0A}),
        _read_dtc_len_ok,
    ),
    SID_CLEAR_DTC: ServiceInfo(
        SID_CLEAR_DTC, "ClearDiagnosticInformation", False, None, _len_eq(3)
    ),
}


def service_name(sid: int) -> str:
    info = SERVICE_TABLE.get(sid)
    return info.name if info else f"Service_0x{sid:02X}"


def encode_request(req: Request) -> bytes:
    info = SERVICE_TABLE.get(req.sid)
    if info is not None:
        if info.has_sub_function and req.sub is None:
            raise CodecError(f"{info.name} requires a sub-function")
        if not info.has_sub_function and req.sub is not None:
            raise CodecError(f"{info.name} does not carry a sub-function")
    out = bytearray([req.sid])
    if req.sub is not None:
        out.append(req.sub.wire_byte)
    out.extend(req.data)
    return bytes(out)


def decode_request(raw: bytes) -> Request:
    """Split raw request bytes per the service table.

    Only performs structural splitting; length/grammar validation is the
    ECU's job (so malformed PDUs can still be dispatched and judged).
    """
    if not raw:
        raise TruncatedPdu("empty request")
    sid = raw[0]
    info = SERVICE_TABLE.get(sid)
    if info is not None and info.has_sub_function:
        if len(raw) < 2:
            raise TruncatedPdu(f"{info.name} missing sub-function byte")
        return Request(sid, SubFunction.from_wire(raw[1]), bytes(raw[2:]))
    return Request(sid, None, bytes(raw[1:]))


def encode_response(resp: Response) -> bytes:
    if isinstance(resp, NegativeResponse):
        return bytes([NEGATIVE_SID, resp.request_sid, int(resp.nrc)])
    return bytes([resp.sid + POSITIVE_OFFSET]) + resp.data


def decode_response(raw: bytes, expected_sid: int) -> Response:
    if not raw:
        raise TruncatedPdu("empty response")
    if raw[0] == NEGATIVE_SID:
        if len(raw) < 3:
            raise TruncatedPdu("negative response shorter than 3 bytes")
        if raw[1] != expected_sid:
            raise SidMismatch(
                f"negative response for 0x{raw[1]:02X}, expected 0x{expected_sid:02X}"
            )
        try:
            nrc = Nrc(raw[2])
        except ValueError as exc:
            raise UnknownNrc(f"NRC 0x{raw[2]:02X}") from exc
        return NegativeResponse(raw[1], nrc)
    if raw[0] == expected_sid + POSITIVE_OFFSET:
        return PositiveResponse(expected_sid, bytes(raw[1:]))
    raise SidMismatch(
        f"response SID 0x{raw[0]:02X} does not match request 0x{expected_sid:02X}"
    )


def is_response_pending(resp: Response) -> bool:
    return isinstance(resp, NegativeResponse) and resp.nrc == Nrc.RESPONSE_PENDING


@dataclass(frozen=True)
class Dtc:
    raw: bytes  # 3 bytes
    status: int = 0

    STATUS_TEST_FAILED = 0x01
    STATUS_PENDING = 0x04
    STATUS_CONFIRMED = 0x08

    def __post_init__(self):
        if len(self.raw) != 3:
            raise CodecError("DTC raw value must be exactly 3 bytes")
        if not 0 <= self.status <= 0xFF:
            raise CodecError("DTC status must fit a byte")


_DTC_LETTERS = "PCBU"


def format_dtc(d: Dtc) -> str:
    letter = _DTC_LETTERS[(d.raw[0] >> 6) & 0x03]
    digits = ((d.raw[0] & 0x3F) << 8) | d.raw[1]
    return f"{letter}{digits:04X}-{d.raw[2]:02X}"


def parse_dtc_raw(text: str) -> bytes:
    """Parse a 3-byte DTC from '0x012345' / '012345' hex notation."""
    s = text.lower().removeprefix("0x")
    raw = bytes.fromhex(s)
    if len(raw) != 3:
        raise CodecError(f"DTC hex must be 3 bytes, got {text!r}")
    return raw
