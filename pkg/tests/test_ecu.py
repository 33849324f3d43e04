import pytest

from udsim import codec, load_default_config
from udsim.canbus import CanId
from udsim.codec import NegativeResponse, Nrc, PositiveResponse
from udsim.ecu import Ecu, EcuConfig, EcuConfigError, KEY_FUNCTIONS, gateway_filter

MS = 1_000_000


@pytest.fixture
def ecu():
    return Ecu(load_default_config())


def positive(resp):
    assert isinstance(resp, PositiveResponse), resp
    return resp


def negative(resp, nrc):
    assert isinstance(resp, NegativeResponse), resp
    assert resp.nrc == nrc, resp
    return resp


def enter_extended(ecu, now=0):
    positive(ecu.handle_request(bytes([0x10, 0x03]), now))


def request_seed(ecu, now=0):
    resp = positive(ecu.handle_request(bytes([0x27, 0x01]), now))
    return resp.data[1:5]


class TestConfig:
    def test_default_session_required(self):
        with pytest.raises(EcuConfigError):
            EcuConfig(sessions={0x03: frozenset({0x3E})})

    def test_snapshot_dids_must_exist(self):
        with pytest.raises(EcuConfigError):
            EcuConfig.from_dict(
                {
                    "sessions": {"default": ["0x3E"]},
                    "dtcs": [{"dtc": "012345", "snapshot": {"0x9999": "00"}}],
                }
            )


class TestDispatch:
    def test_tester_present_positive(self, ecu):
        enter_extended(ecu)
        resp = positive(ecu.handle_request(bytes([0x3E, 0x00]), 1 * MS))
        assert codec.encode_response(resp) == bytes([0x7E, 0x00])
        assert ecu.state.s3_deadline == 1 * MS + 5000 * MS

    def test_suppressed_positive_omitted_but_s3_refreshed(self, ecu):
        enter_extended(ecu, now=0)
        assert ecu.handle_request(bytes([0x3E, 0x80]), 2000 * MS) is None
        assert ecu.state.s3_deadline == 7000 * MS

    def test_negative_emitted_despite_suppress_bit(self, ecu):
        resp = ecu.handle_request(bytes([0x3E, 0x80, 0x00]), 0)
        negative(resp, Nrc.INCORRECT_LENGTH)

    def test_unknown_service(self, ecu):
        negative(ecu.handle_request(bytes([0x31, 0x01]), 0), Nrc.SERVICE_NOT_SUPPORTED)

    def test_service_not_in_session(self, ecu):
        negative(
            ecu.handle_request(bytes([0x27, 0x01]), 0), Nrc.SERVICE_NOT_IN_SESSION
        )
        negative(
            ecu.handle_request(bytes([0x2E, 0xF1, 0xA0, 0x00, 0x00]), 0),
            Nrc.SERVICE_NOT_IN_SESSION,
        )

    def test_unknown_sub_function(self, ecu):
        negative(
            ecu.handle_request(bytes([0x3E, 0x55]), 0), Nrc.SUB_FUNCTION_NOT_SUPPORTED
        )

    def test_sub_not_in_session(self, ecu):
        # DTC snapshot report is gated to the extended session in the config
        negative(
            ecu.handle_request(bytes([0x19, 0x04, 0x01, 0x23, 0x45, 0x01]), 0),
            Nrc.SUB_FUNCTION_NOT_IN_SESSION,
        )


class TestSessionControl:
    def test_enter_extended_arms_s3(self, ecu):
        resp = positive(ecu.handle_request(bytes([0x10, 0x03]), 7 * MS))
        assert resp.data[0] == 0x03
        assert resp.data[1:3] == (50).to_bytes(2, "big")
        assert resp.data[3:5] == (500).to_bytes(2, "big")
        assert ecu.state.active_session == 0x03
        assert ecu.state.s3_deadline == 7 * MS + 5000 * MS

    def test_back_to_default_relocks(self, ecu):
        enter_extended(ecu)
        ecu.state.unlocked_levels.add(1)
        positive(ecu.handle_request(bytes([0x10, 0x01]), 0))
        assert ecu.state.unlocked_levels == set()
        assert ecu.state.s3_deadline is None

    def test_programming_unsupported(self, ecu):
        negative(
            ecu.handle_request(bytes([0x10, 0x02]), 0), Nrc.SUB_FUNCTION_NOT_SUPPORTED
        )


class TestSecurityAccess:
    def test_seed_then_complement_key_unlocks(self, ecu):
        enter_extended(ecu)
        seed = request_seed(ecu)
        key = KEY_FUNCTIONS["complement"](seed)
        positive(ecu.handle_request(bytes([0x27, 0x02]) + key, 0))
        assert 1 in ecu.state.unlocked_levels

    def test_complement_example(self):
        assert KEY_FUNCTIONS["complement"](bytes.fromhex("11223344")) == bytes.fromhex(
            "eeddccbb"
        )

    def test_seed_deterministic_per_rng_seed(self):
        cfg = load_default_config()
        a, b = Ecu(cfg), Ecu(cfg)
        enter_extended(a)
        enter_extended(b)
        assert request_seed(a) == request_seed(b)

    def test_already_unlocked_returns_zero_seed(self, ecu):
        enter_extended(ecu)
        key = KEY_FUNCTIONS["complement"](request_seed(ecu))
        positive(ecu.handle_request(bytes([0x27, 0x02]) + key, 0))
        resp = positive(ecu.handle_request(bytes([0x27, 0x01]), 0))
        assert resp.data[1:5] == b"\x00" * 4

    def test_send_key_without_seed(self, ecu):
        enter_extended(ecu)
        negative(
            ecu.handle_request(bytes([0x27, 0x02, 0, 0, 0, 0]), 0),
            Nrc.REQUEST_SEQUENCE_ERROR,
        )

    def test_lockout_sequence(self, ecu):
        enter_extended(ecu)
        nrcs = []
        for _ in range(3):
            request_seed(ecu)
            resp = ecu.handle_request(bytes([0x27, 0x02, 0, 0, 0, 0]), 0)
            nrcs.append(resp.nrc)
        assert nrcs == [Nrc.INVALID_KEY, Nrc.INVALID_KEY, Nrc.EXCEEDED_ATTEMPTS]
        negative(ecu.handle_request(bytes([0x27, 0x01]), 1 * MS), Nrc.REQUIRED_TIME_DELAY)

    def test_unlock_after_lockout_expiry(self, ecu):
        enter_extended(ecu)
        for _ in range(3):
            request_seed(ecu)
            ecu.handle_request(bytes([0x27, 0x02, 0, 0, 0, 0]), 0)
        # keep the session alive past the lockout window
        ecu.handle_request(bytes([0x3E, 0x00]), 9000 * MS)
        ecu.tick(10_000 * MS)
        seed = request_seed(ecu, now=10_000 * MS)
        key = KEY_FUNCTIONS["complement"](seed)
        positive(ecu.handle_request(bytes([0x27, 0x02]) + key, 10_000 * MS))


class TestS3Timer:
    def test_expiry_returns_to_default_and_relocks(self, ecu):
        enter_extended(ecu, now=0)
        ecu.state.unlocked_levels.add(1)
        ecu.tick(4999 * MS)
        assert ecu.state.active_session == 0x03
        ecu.tick(5000 * MS)
        assert ecu.state.active_session == 0x01
        assert ecu.state.unlocked_levels == set()

    def test_keep_alive_extends(self, ecu):
        enter_extended(ecu, now=0)
        for t_ms in range(2000, 60_001, 2000):
            ecu.tick(t_ms * MS)
            assert ecu.state.active_session == 0x03
            ecu.handle_request(bytes([0x3E, 0x80]), t_ms * MS)

    def test_default_session_tick_is_noop(self, ecu):
        ecu.tick(100_000 * MS)
        assert ecu.state.active_session == 0x01
        assert ecu.state.s3_deadline is None


class TestDids:
    def test_read_vin(self, ecu):
        resp = positive(ecu.handle_request(bytes([0x22, 0xF1, 0x90]), 0))
        assert resp.data == bytes([0xF1, 0x90]) + b"UDSIM00000TEST001"

    def test_constant_did_stable_over_time(self, ecu):
        a = positive(ecu.handle_request(bytes([0x22, 0xF1, 0x23]), 0))
        b = positive(ecu.handle_request(bytes([0x22, 0xF1, 0x23]), 99_000 * MS))
        assert a.data == b.data

    def test_unknown_did(self, ecu):
        negative(ecu.handle_request(bytes([0x22, 0x99, 0x99]), 0), Nrc.REQUEST_OUT_OF_RANGE)

    def test_multi_did_read(self, ecu):
        resp = positive(ecu.handle_request(bytes([0x22, 0xF1, 0x23, 0xF1, 0xA0]), 0))
        assert resp.data[:2] == bytes([0xF1, 0x23])
        assert resp.data[4:6] == bytes([0xF1, 0xA0])

    def test_write_locked_did_denied(self, ecu):
        enter_extended(ecu)
        negative(
            ecu.handle_request(bytes([0x2E, 0xF1, 0x90]) + b"X" * 17, 0),
            Nrc.SECURITY_ACCESS_DENIED,
        )

    def test_write_after_unlock(self, ecu):
        enter_extended(ecu)
        key = KEY_FUNCTIONS["complement"](request_seed(ecu))
        positive(ecu.handle_request(bytes([0x27, 0x02]) + key, 0))
        positive(ecu.handle_request(bytes([0x2E, 0xF1, 0x90]) + b"Y" * 17, 0))
        resp = positive(ecu.handle_request(bytes([0x22, 0xF1, 0x90]), 0))
        assert resp.data[2:] == b"Y" * 17

    def test_write_wrong_length(self, ecu):
        enter_extended(ecu)
        negative(
            ecu.handle_request(bytes([0x2E, 0xF1, 0xA0, 0x01]), 0), Nrc.INCORRECT_LENGTH
        )

    def test_sinusoid_matches_model(self, ecu):
        spec = ecu.cfg.dids[0xF122]
        t = 1234 * MS
        resp = positive(ecu.handle_request(bytes([0x22, 0xF1, 0x22]), t))
        assert resp.data[2:] == spec.model.eval_raw(t).to_bytes(2, "big")


class TestDtcStore:
    def test_report_by_status_mask(self, ecu):
        resp = positive(ecu.handle_request(bytes([0x19, 0x02, 0x08]), 0))
        assert resp.data[0] == 0x02 and resp.data[1] == 0x09
        assert resp.data[2:5] == bytes([0x01, 0x23, 0x45])

    def test_zero_mask_empty(self, ecu):
        resp = positive(ecu.handle_request(bytes([0x19, 0x02, 0x00]), 0))
        assert resp.data == bytes([0x02, 0x09])

    def test_snapshot_matches_config_fixture(self, ecu):
        enter_extended(ecu)
        resp = positive(
            ecu.handle_request(bytes([0x19, 0x04, 0x01, 0x23, 0x45, 0x01]), 0)
        )
        # sub, dtc(3), status, record#, count, then (did, len, bytes) entries
        assert resp.data[1:4] == bytes([0x01, 0x23, 0x45])
        assert resp.data[6] == 2
        body = resp.data[7:]
        entries = {}
        while body:
            did = int.from_bytes(body[:2], "big")
            n = body[2]
            entries[did] = body[3 : 3 + n]
            body = body[3 + n :]
        assert entries == {0xF122: bytes.fromhex("0258"), 0xF123: bytes.fromhex("0f93")}

    def test_unknown_dtc_snapshot(self, ecu):
        enter_extended(ecu)
        negative(
            ecu.handle_request(bytes([0x19, 0x04, 0xAA, 0xBB, 0xCC, 0x01]), 0),
            Nrc.REQUEST_OUT_OF_RANGE,
        )

    def test_clear_all(self, ecu):
        positive(ecu.handle_request(bytes([0x14, 0xFF, 0xFF, 0xFF]), 0))
        resp = positive(ecu.handle_request(bytes([0x19, 0x0A]), 0))
        assert resp.data == bytes([0x0A, 0x09])

    def test_clear_family(self, ecu):
        ecu.inject_fault(bytes([0xC1, 0x23, 0x00]), 0x09, 0)
        positive(ecu.handle_request(bytes([0x14, 0x01, 0xFF, 0xFF]), 0))
        resp = positive(ecu.handle_request(bytes([0x19, 0x0A]), 0))
        assert resp.data[2:5] == bytes([0xC1, 0x23, 0x00])

    def test_unknown_group(self, ecu):
        negative(
            ecu.handle_request(bytes([0x14, 0x00, 0x00, 0x00]), 0),
            Nrc.REQUEST_OUT_OF_RANGE,
        )

    def test_inject_fault_snapshots_tagged_dids(self, ecu):
        rec = ecu.inject_fault(bytes([0x01, 0x99, 0x00]), 0x09, 2000 * MS)
        dids = [d for d, _ in rec.snapshot]
        assert dids == [0xF122, 0xF123, 0xF124, 0xF125]
        speed = dict(rec.snapshot)[0xF122]
        assert speed == ecu.cfg.dids[0xF122].model.eval_raw(2000 * MS).to_bytes(2, "big")


class TestWorkDelay:
    def test_clear_dtc_emits_pending_then_final(self, ecu):
        sends = ecu.handle_payload(bytes([0x14, 0xFF, 0xFF, 0xFF]), 0)
        assert [t for t, _ in sends] == [50 * MS, 200 * MS]
        assert sends[0][1] == bytes([0x7F, 0x14, 0x78])
        assert sends[1][1] == bytes([0x54])

    def test_rejected_request_not_delayed(self, ecu):
        sends = ecu.handle_payload(bytes([0x14, 0xFF, 0xFF]), 0)
        assert sends == [(0, bytes([0x7F, 0x14, 0x13]))]


class TestDeterminism:
    def test_replay_byte_identical(self):
        script = [
            bytes([0x10, 0x03]),
            bytes([0x27, 0x01]),
            bytes([0x22, 0xF1, 0x22]),
            bytes([0x19, 0x02, 0x09]),
            bytes([0x3E, 0x80]),
        ]
        cfg = load_default_config()

        def run():
            ecu = Ecu(cfg)
            out = []
            for i, raw in enumerate(script):
                resp = ecu.handle_request(raw, i * 10 * MS)
                out.append(None if resp is None else codec.encode_response(resp))
            return out

        assert run() == run()


class TestGateway:
    def test_disabled_passes_everything(self):
        cfg = load_default_config()
        assert gateway_filter(cfg, CanId(0x100))

    def test_enabled_blocks_raw_traffic(self):
        cfg = load_default_config()
        cfg.gateway_mode = True
        assert not gateway_filter(cfg, CanId(0x100))
        assert gateway_filter(cfg, CanId(0x7E0))
        assert gateway_filter(cfg, CanId(0x7E8))
