import pytest
from hypothesis import given, settings, strategies as st

from udsim import codec
from udsim.codec import (
    Dtc,
    NegativeResponse,
    Nrc,
    PositiveResponse,
    Request,
    SERVICE_TABLE,
    SidMismatch,
    SubFunction,
    SubFunctionOutOfRange,
    TruncatedPdu,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    format_dtc,
    is_response_pending,
)


class TestEncodeRequest:
    def test_session_control_suppressed(self):
        req = Request(0x10, SubFunction(0x03, suppress_positive_response=True))
        assert encode_request(req) == bytes([0x10, 0x83])

    def test_tester_present_plain(self):
        assert encode_request(Request(0x3E, SubFunction(0x00))) == bytes([0x3E, 0x00])

    def test_read_did_big_endian(self):
        req = Request(0x22, None, bytes([0xF1, 0x90]))
        assert encode_request(req) == bytes([0x22, 0xF1, 0x90])

    def test_sub_function_range(self):
        with pytest.raises(SubFunctionOutOfRange):
            SubFunction(0x80)

    def test_sub_required(self):
        with pytest.raises(codec.CodecError):
            encode_request(Request(0x10))


class TestDecodeResponse:
    def test_negative(self):
        resp = decode_response(bytes([0x7F, 0x27, 0x35]), 0x27)
        assert resp == NegativeResponse(0x27, Nrc.INVALID_KEY)

    def test_positive(self):
        raw = bytes([0x50, 0x03, 0x00, 0x32, 0x01, 0xF4])
        resp = decode_response(raw, 0x10)
        assert resp == PositiveResponse(0x10, bytes([0x03, 0x00, 0x32, 0x01, 0xF4]))

    def test_truncated_negative(self):
        with pytest.raises(TruncatedPdu):
            decode_response(bytes([0x7F, 0x27]), 0x27)

    def test_sid_mismatch(self):
        with pytest.raises(SidMismatch):
            decode_response(bytes([0x50, 0x03]), 0x3E)

    def test_unknown_nrc(self):
        with pytest.raises(codec.UnknownNrc):
            decode_response(bytes([0x7F, 0x27, 0x99]), 0x27)


class TestResponsePending:
    def test_pending(self):
        assert is_response_pending(NegativeResponse(0x14, Nrc.RESPONSE_PENDING))

    def test_other_negative(self):
        assert not is_response_pending(NegativeResponse(0x14, Nrc.INCORRECT_LENGTH))

    def test_positive(self):
        assert not is_response_pending(PositiveResponse(0x14))


class TestDtcFormat:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            (bytes([0x01, 0x23, 0x45]), "P0123-45"),
            (bytes([0xC1, 0x23, 0x00]), "U0123-00"),
            (bytes([0x00, 0x00, 0x00]), "P0000-00"),
            (bytes([0x41, 0x23, 0x45]), "C0123-45"),
            (bytes([0x81, 0x23, 0x45]), "B0123-45"),
        ],
    )
    def test_display_form(self, raw, expected):
        assert format_dtc(Dtc(raw)) == expected

    def test_raw_length(self):
        with pytest.raises(codec.CodecError):
            Dtc(b"\x00\x00")


def valid_requests():
    def build(sid, sub_value, suppress, data):
        info = SERVICE_TABLE[sid]
        sub = SubFunction(sub_value, suppress) if info.has_sub_function else None
        return Request(sid, sub, data)

    return st.builds(
        build,
        st.sampled_from(sorted(SERVICE_TABLE)),
        st.integers(min_value=0, max_value=0x7F),
        st.booleans(),
        st.binary(max_size=32),
    )


class TestRoundTrip:
    @given(valid_requests())
    @settings(max_examples=500, deadline=None)
    def test_decode_encode_identity(self, req):
        assert decode_request(encode_request(req)) == req

    @given(st.integers(min_value=0, max_value=0xFF))
    def test_suppress_flag_mirrors_wire_bit(self, byte):
        sub = SubFunction.from_wire(byte)
        assert sub.suppress_positive_response == bool(byte & 0x80)
        assert sub.wire_byte == byte

    @given(valid_requests())
    @settings(max_examples=100, deadline=None)
    def test_positive_and_negative_wire_forms_disjoint(self, req):
        # 0x7F is reserved for negatives, so no encoded positive starts with it.
        wire = encode_response(PositiveResponse(req.sid, b"\x00"))
        assert wire[0] != codec.NEGATIVE_SID
        neg = encode_response(NegativeResponse(req.sid, Nrc.GENERAL_REJECT))
        assert neg[0] == codec.NEGATIVE_SID
