"""HTTP/WebSocket service exposing live diagnostic sessions.

All wire payloads cross the API as lowercase hex strings. The WebSocket
stream is a tap over the session's recording and state: every event it
pushes is also present in the trace/event buffer.
"""
from __future__ import annotations

import asyncio
import json
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel

from .. import codec, default_config_path
from ..conformance import generate_matrix, run as run_matrix
from ..ecu import EcuConfig
from ..tester import PollEntry
from .runtime import SessionBusy, SessionRuntime


def _to_int(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


class CreateSession(BaseModel):
    ecu: str = "default"
    gateway: Optional[bool] = None


class RawRequest(BaseModel):
    hex: str


class SessionControlBody(BaseModel):
    target: str | int = "extended"


class UnlockBody(BaseModel):
    level: int = 1


class PollListBody(BaseModel):
    entries: list[dict]


class ClearBody(BaseModel):
    group: str | int = "0xFFFFFF"


class FaultBody(BaseModel):
    dtc: str
    status: int = 0x09


class KeepAliveBody(BaseModel):
    enabled: bool = True


def create_app(
    config_dir: Optional[Path] = None, real_time: bool = False
) -> FastAPI:
    app = FastAPI(title="udsim diagd")
    configs: dict[str, Path] = {"default": Path(str(default_config_path()))}
    if config_dir is not None:
        for p in sorted(Path(config_dir).glob("*.json")):
            configs[p.stem] = p
    sessions: dict[str, SessionRuntime] = {}
    reports: dict[str, dict] = {}

    def get_session(session_id: str) -> SessionRuntime:
        rt = sessions.get(session_id)
        if rt is None:
            raise HTTPException(404, "unknown session id")
        return rt

    @app.get("/ecus")
    def list_ecus():
        return {"ecus": sorted(configs)}

    @app.post("/sessions")
    def create_session(body: CreateSession):
        path = configs.get(body.ecu)
        if path is None:
            raise HTTPException(400, f"unknown ECU config {body.ecu!r}")
        cfg = EcuConfig.from_file(path)
        if body.gateway is not None:
            cfg.gateway_mode = body.gateway
        session_id = uuid.uuid4().hex[:12]
        sessions[session_id] = SessionRuntime(session_id, cfg, real_time=real_time)
        return {"id": session_id, "ecu": body.ecu, "gateway": cfg.gateway_mode}

    @app.post("/sessions/{session_id}/request")
    def raw_request(session_id: str, body: RawRequest):
        rt = get_session(session_id)
        try:
            return rt.request_hex(body.hex)
        except SessionBusy as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))

    @app.post("/sessions/{session_id}/session-control")
    def session_control(session_id: str, body: SessionControlBody):
        rt = get_session(session_id)
        target = (
            codec.SESSION_BY_NAME.get(body.target)
            if isinstance(body.target, str) and not body.target.startswith("0x")
            else None
        )
        if target is None:
            try:
                target = _to_int(body.target)
            except (TypeError, ValueError):
                raise HTTPException(400, f"bad target session {body.target!r}")
        try:
            return rt.session_control(target)
        except SessionBusy as exc:
            raise HTTPException(409, str(exc))

    @app.post("/sessions/{session_id}/unlock")
    def unlock(session_id: str, body: UnlockBody):
        rt = get_session(session_id)
        try:
            return rt.unlock(body.level)
        except SessionBusy as exc:
            raise HTTPException(409, str(exc))

    @app.get("/sessions/{session_id}/poll-list")
    def get_poll_list(session_id: str):
        rt = get_session(session_id)
        return {
            "entries": [
                {"did": f"0x{e.did:04X}", "period_ms": e.period_ms}
                for e in rt.poll_entries
            ]
        }

    @app.post("/sessions/{session_id}/poll-list")
    def set_poll_list(session_id: str, body: PollListBody):
        rt = get_session(session_id)
        try:
            entries = [
                PollEntry(_to_int(e["did"]), int(e["period_ms"])) for e in body.entries
            ]
            rt.set_poll_list(entries)
        except Exception as exc:
            raise HTTPException(400, str(exc))
        return {"count": len(entries)}

    @app.post("/sessions/{session_id}/dtc/clear")
    def clear_dtcs(session_id: str, body: ClearBody):
        rt = get_session(session_id)
        try:
            return rt.clear_dtcs(_to_int(body.group))
        except SessionBusy as exc:
            raise HTTPException(409, str(exc))

    @app.post("/sessions/{session_id}/fault-inject")
    def fault_inject(session_id: str, body: FaultBody):
        rt = get_session(session_id)
        try:
            return rt.inject_fault(body.dtc, body.status)
        except codec.CodecError as exc:
            raise HTTPException(400, str(exc))

    @app.post("/sessions/{session_id}/keep-alive")
    def keep_alive(session_id: str, body: KeepAliveBody):
        get_session(session_id).keep_alive(body.enabled)
        return {"enabled": body.enabled}

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str, body: dict):
        # Turbo-mode clock driver; real-time sessions advance on their own.
        get_session(session_id).advance(float(body.get("ms", 0)))
        return {"now_ns": get_session(session_id).world.now_ns}

    @app.get("/sessions/{session_id}/state")
    def state(session_id: str):
        return get_session(session_id)._state_snapshot()

    @app.get("/sessions/{session_id}/dtcs")
    def dtcs(session_id: str):
        rt = get_session(session_id)
        return {
            "dtcs": [
                {
                    "code": codec.format_dtc(rec.dtc),
                    "raw": rec.dtc.raw.hex(),
                    "status": rec.dtc.status,
                    "snapshot": {f"0x{d:04X}": v.hex() for d, v in rec.snapshot},
                }
                for rec in rt.world.ecu.state.dtc_store
            ]
        }

    @app.post("/sessions/{session_id}/fuzz")
    def fuzz(session_id: str):
        rt = get_session(session_id)
        cases = generate_matrix(rt.cfg)
        report = run_matrix(cases, rt.cfg)
        report_id = uuid.uuid4().hex[:12]
        reports[report_id] = {
            "id": report_id,
            "total": report.total,
            "passed": report.passed,
            "failed": report.failed,
            "results": [r.to_dict() for r in report.results],
        }
        return {"report_id": report_id, "passed": report.passed, "total": report.total}

    @app.get("/reports/{report_id}")
    def get_report(report_id: str):
        report = reports.get(report_id)
        if report is None:
            raise HTTPException(404, "unknown report id")
        return report

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        rt = sessions.get(session_id)
        if rt is None:
            await websocket.close(code=4004)
            return
        await websocket.accept()
        cursor = 0
        try:
            while True:
                batch = rt.events_since(cursor)
                for event in batch:
                    await websocket.send_text(json.dumps(event))
                    cursor = event["seq"] + 1
                await asyncio.sleep(0.05)
        except WebSocketDisconnect:
            pass

    app.state.sessions = sessions
    return app
