"""Command-line shell for scripted simulation, polling, fuzzing, recording.

Exit codes: 0 success, 1 protocol-level failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .. import codec, default_config_path
from ..codec import NegativeResponse, PositiveResponse
from ..conformance import generate_matrix, run as run_matrix
from ..ecu import EcuConfig
from ..sim import World
from ..tester import Connection, PollEntry, PollList, SUPPRESSED_OK, TesterError
from ..trace import NeverFired, capture

EXIT_OK = 0
EXIT_PROTOCOL = 1
EXIT_USAGE = 2


def _load_cfg(args) -> EcuConfig:
    path = args.ecu or str(default_config_path())
    cfg = EcuConfig.from_file(path)
    if getattr(args, "gateway", False):
        cfg.gateway_mode = True
    return cfg


def _print_response(resp) -> int:
    if resp is SUPPRESSED_OK:
        print("suppressed positive response")
        return EXIT_OK
    wire = codec.encode_response(resp)
    if isinstance(resp, NegativeResponse):
        print(
            f"{wire.hex()}  {codec.service_name(resp.request_sid)} "
            f"negative: {resp.nrc.short_name}"
        )
        return EXIT_PROTOCOL
    print(f"{wire.hex()}  {codec.service_name(resp.sid)} ok")
    return EXIT_OK


def cmd_sim(args) -> int:
    cfg = _load_cfg(args)
    world = World(cfg)
    Connection(world)
    world.run_for_ms(args.duration)
    print(
        f"simulated {args.duration} ms on {cfg.name}: "
        f"{len(world.recording)} frames recorded, "
        f"session={codec.SESSION_NAMES[world.ecu.state.active_session]}"
    )
    return EXIT_OK


def cmd_req(args) -> int:
    cfg = _load_cfg(args)
    world = World(cfg)
    conn = Connection(world)
    if args.session != "default":
        conn.session_control(codec.SESSION_BY_NAME[args.session])
    try:
        resp = conn.request_raw(bytes.fromhex(args.hex))
    except TesterError as exc:
        print(f"request failed: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    return _print_response(resp)


def cmd_unlock(args) -> int:
    cfg = _load_cfg(args)
    world = World(cfg)
    conn = Connection(world)
    conn.session_control(codec.SESSION_EXTENDED)
    try:
        outcome = conn.unlock(args.level)
    except TesterError as exc:
        print(f"unlock failed: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    print(outcome)
    return EXIT_OK


def cmd_dtc(args) -> int:
    cfg = _load_cfg(args)
    world = World(cfg)
    conn = Connection(world)
    if args.action == "read":
        resp = conn.read_dtcs(0x0A)
        if isinstance(resp, NegativeResponse):
            return _print_response(resp)
        body = resp.data[2:]
        while len(body) >= 4:
            dtc = codec.Dtc(bytes(body[:3]), body[3])
            print(f"{codec.format_dtc(dtc)}  status=0x{dtc.status:02X}")
            body = body[4:]
        return EXIT_OK
    resp = conn.clear_dtcs(int(args.group, 0))
    return _print_response(resp)


def cmd_poll(args) -> int:
    cfg = _load_cfg(args)
    world = World(cfg)
    conn = Connection(world)
    with open(args.list) as f:
        doc = json.load(f)
    entries = tuple(
        PollEntry(int(e["did"], 0) if isinstance(e["did"], str) else e["did"], e["period_ms"])
        for e in doc["entries"]
    )
    samples = conn.poll_dids(PollList(entries), args.duration)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t_ns", "did", "raw_hex", "scaled", "unit", "error"])
        for s in samples:
            writer.writerow(
                [
                    s.t_ns,
                    f"0x{s.did:04X}",
                    s.raw.hex() if s.raw else "",
                    "" if s.scaled is None else f"{s.scaled:.6g}",
                    s.unit,
                    s.error or "",
                ]
            )
    errors = sum(1 for s in samples if s.error)
    print(f"{len(samples)} samples ({errors} errors) -> {args.out}")
    return EXIT_OK


def cmd_fuzz(args) -> int:
    cfg = _load_cfg(args)
    cases = generate_matrix(cfg)
    report = run_matrix(cases, cfg, length_check=not args.disable_length_check)
    if args.out:
        report.to_jsonl(args.out)
    print(report.format_table())
    return EXIT_OK if report.failed == 0 else EXIT_PROTOCOL


def _trigger_predicate(spec: str):
    if spec == "nrc":
        return lambda rec: "negative" in rec.decode_text
    if spec.startswith("nrc:"):
        code = int(spec.split(":", 1)[1], 0)
        name = codec.Nrc(code).short_name
        return lambda rec: name in rec.decode_text
    if spec.startswith("id:"):
        value = int(spec.split(":", 1)[1], 0)
        return lambda rec: rec.frame.can_id.value == value
    if spec.startswith("service:"):
        sid = int(spec.split(":", 1)[1], 0)
        sname = codec.service_name(sid)
        return lambda rec: sname in rec.decode_text
    raise ValueError(f"unknown trigger spec {spec!r}")


def cmd_record(args) -> int:
    try:
        predicate = _trigger_predicate(args.trigger)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    cfg = _load_cfg(args)
    world = World(cfg)
    conn = Connection(world)
    # Built-in exercise: session switch, polling traffic, one malformed
    # request to provoke an NRC, then a DTC read.
    conn.session_control(codec.SESSION_EXTENDED)
    dids = sorted(cfg.dids)[:2]
    conn.poll_dids(PollList.of(*((d, 50) for d in dids)), 400)
    try:
        conn.request_raw(bytes([codec.SID_TESTER_PRESENT, 0x00, 0x00]))
    except TesterError:
        pass
    conn.read_dtcs(0x0A)
    world.run_for_ms(args.post + 50)
    try:
        window = capture(world.recording, predicate, args.pre, args.post)
    except NeverFired:
        print("trigger never fired", file=sys.stderr)
        return EXIT_PROTOCOL
    from ..trace import Recording

    out = Recording(capacity=len(window) + 1)
    for rec in window:
        out.append(rec.t_ns, rec.direction, rec.frame, rec.decode_kind, rec.decode_text)
    out.export("csv", args.out)
    print(f"{len(window)} records in trigger window -> {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    host, _, port = args.bind.rpartition(":")
    app = create_app(
        config_dir=Path(args.config_dir) if args.config_dir else None,
        real_time=not args.turbo,
    )
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udsim")
    parser.add_argument("--ecu", help="ECU config JSON (default: shipped demo ECU)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="boot the world and run it for a while")
    p.add_argument("--gateway", action="store_true")
    p.add_argument("--duration", type=float, default=1000.0, help="ms of simulated time")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("req", help="send one raw service request")
    p.add_argument("--hex", required=True)
    p.add_argument("--session", default="default", choices=list(codec.SESSION_BY_NAME))
    p.set_defaults(func=cmd_req)

    p = sub.add_parser("unlock", help="security access handshake")
    p.add_argument("--level", type=int, default=1)
    p.set_defaults(func=cmd_unlock)

    p = sub.add_parser("dtc", help="read or clear stored DTCs")
    p.add_argument("action", choices=["read", "clear"])
    p.add_argument("--group", default="0xFFFFFF")
    p.set_defaults(func=cmd_dtc)

    p = sub.add_parser("poll", help="periodic DID polling to CSV")
    p.add_argument("--list", required=True, help="poll list JSON file")
    p.add_argument("--duration", type=float, required=True, help="ms")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_poll)

    p = sub.add_parser("fuzz", help="run the alteration matrix")
    p.add_argument("--out", help="JSONL report path")
    p.add_argument("--disable-length-check", action="store_true")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("record", help="triggered capture to CSV")
    p.add_argument("--trigger", required=True, help="nrc | nrc:0xNN | id:0xNNN | service:0xNN")
    p.add_argument("--pre", type=float, default=100.0)
    p.add_argument("--post", type=float, default=250.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("serve", help="run the HTTP/WebSocket service")
    p.add_argument("--bind", default="127.0.0.1:8700")
    p.add_argument("--turbo", action="store_true", help="virtual clock (no wall-time thread)")
    p.add_argument("--config-dir", help="directory of extra ECU config JSON files")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
