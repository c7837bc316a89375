"""Real-time session host: drives the engine from websocket input streams and
pushes per-tick state, plus a small HTTP API for sessions, reports, and clips.

Wire schemas (field names are the contract):
  ClientInput  {seq, t, L: {p, q, jaw}, R: {p, q, jaw}, master: {L, R}}
  ServerState  {tick, needle, topo, seg, phase, cues, metrics, events, prompts}
"""

from __future__ import annotations

import asyncio
import json
import os
import time
from typing import Dict, List, Optional, Tuple

from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse

from . import analytics
from .analytics import ParticipantSeries
from .engine import Engine
from .geometry import GeometryError, Pose, UnitQuat, Vec3
from .session import SessionFormatError, expert_clip, read_summary, save_session
from .task_core import InputError, InputTick, ProtocolError, TaskConfig, default_task_config

# Websocket close codes (4xxx application range).
CLOSE_BAD_TOKEN = 4403
CLOSE_MALFORMED = 4400


def _client_pose(obj: dict) -> Pose:
    # Client quaternions arrive with whatever drift their math left behind;
    # normalize here so the engine (and the recording) only ever sees unit
    # rotations.  Recorded files skip this path and parse literally.
    q = obj["q"]
    return Pose(
        Vec3.from_list(obj["p"]),
        UnitQuat.normalize(float(q[0]), float(q[1]), float(q[2]), float(q[3])),
    )


def _parse_client_input(obj: dict, tick: int) -> Tuple[int, InputTick]:
    """Validate a ClientInput message and bind it to the next engine tick."""
    seq = int(obj["seq"])
    left = obj["L"]
    right = obj["R"]
    master = obj["master"]
    inp = InputTick(
        tick=tick,
        l_pose=_client_pose(left),
        r_pose=_client_pose(right),
        l_jaw=float(left["jaw"]),
        r_jaw=float(right["jaw"]),
        l_master=Vec3.from_list(master["L"]),
        r_master=Vec3.from_list(master["R"]),
    )
    return seq, inp


def _hold_input(engine: Engine, tick: int) -> InputTick:
    """Previous commanded state re-issued for a tick with no fresh input."""
    world = engine.world
    return InputTick(
        tick=tick,
        l_pose=world.left.tip_pose,
        r_pose=world.right.tip_pose,
        l_jaw=world.left.jaw,
        r_jaw=world.right.jaw,
        l_master=world.l_master,
        r_master=world.r_master,
    )


def _metrics_snapshot(engine: Engine, result) -> dict:
    forces = result.forces
    snap = {
        "forces": {
            "instrument_left": forces.instrument_left,
            "instrument_right": forces.instrument_right,
            "needle_tissue": forces.needle_tissue,
        },
        "deviations": len(result.progress.deviations),
        "retractions": result.progress.retractions,
        "segment_metrics": None,
    }
    last = engine.last_segment_metrics
    if last is not None:
        snap["segment_metrics"] = {
            "time_s": last.time_s,
            "grasp_position_dev_deg": last.grasp_position_dev_deg,
            "grasp_orientation_dev_deg": last.grasp_orientation_dev_deg,
            "in_plane_dev_mm": last.in_plane_dev_mm,
            "out_plane_dev_mm": last.out_plane_dev_mm,
            "excess_pierces": last.excess_pierces,
            "path_length_mm": last.path_length_mm,
        }
    return snap


def _server_state(engine: Engine, result, extra_events: List[dict]) -> str:
    events = extra_events + [
        {"t": e.tick, "kind": e.kind, "payload": e.payload}
        for e in (*result.sim_events, *result.tpm_events)
    ]
    return json.dumps(
        {
            "tick": result.tick,
            "needle": result.world.needle_pose.to_dict(),
            "topo": result.progress.topo,
            "seg": result.progress.segment_index,
            "phase": result.progress.phase,
            "cues": [c.to_dict() for c in result.cue_descriptors],
            "metrics": _metrics_snapshot(engine, result),
            "events": events,
            "prompts": list(result.prompts),
        },
        allow_nan=False,
    )


class SessionRegistry:
    """Shared id -> file path map; the only cross-session structure."""

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        self._lock = asyncio.Lock()
        self._paths: Dict[str, str] = {}
        os.makedirs(data_dir, exist_ok=True)
        for name in os.listdir(data_dir):
            if name.endswith(".vcs"):
                self._paths[name[: -len(".vcs")]] = os.path.join(data_dir, name)

    async def store(self, session_id: str, record) -> str:
        path = os.path.join(self.data_dir, f"{session_id}.vcs")
        save_session(record, path)
        async with self._lock:
            self._paths[session_id] = path
        return path

    async def ids(self) -> List[str]:
        async with self._lock:
            return sorted(self._paths)

    async def path(self, session_id: str) -> str:
        async with self._lock:
            if session_id not in self._paths:
                raise KeyError(session_id)
            return self._paths[session_id]


def build_app(
    config: Optional[TaskConfig] = None,
    data_dir: str = "sessions",
    clip_dir: Optional[str] = None,
    token: Optional[str] = None,
) -> FastAPI:
    config = config if config is not None else default_task_config()
    app = FastAPI(title="vcoach session service")
    registry = SessionRegistry(data_dir)
    app.state.config = config
    app.state.registry = registry
    app.state.clip_dir = clip_dir
    app.state.token = token

    def check_http_auth(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    @app.get("/sessions")
    async def list_sessions(request: Request):
        check_http_auth(request)
        out = []
        for session_id in await registry.ids():
            header, footer = read_summary(await registry.path(session_id))
            out.append(
                {
                    "id": session_id,
                    "participant": header["participant"],
                    "mode": header["mode"],
                    "seed": header["seed"],
                    "completion_time_s": footer.get("Completion Time (s)"),
                }
            )
        return out

    @app.get("/sessions/{session_id}")
    async def fetch_session(session_id: str, request: Request):
        check_http_auth(request)
        try:
            path = await registry.path(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        with open(path, "r", encoding="utf-8") as f:
            return PlainTextResponse(f.read(), media_type="application/x-ndjson")

    @app.get("/sessions/{session_id}/metrics")
    async def fetch_metrics(session_id: str, request: Request):
        check_http_auth(request)
        try:
            path = await registry.path(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        _, footer = read_summary(path)
        return footer

    @app.post("/reports")
    async def build_report(body: dict, request: Request):
        check_http_auth(request)
        try:
            manifest_a = list(body["arm_a"])
            manifest_b = list(body["arm_b"])
        except (KeyError, TypeError):
            raise HTTPException(status_code=422, detail="body needs arm_a and arm_b id lists")
        label = body.get("label", "final")

        async def cohort(ids: List[str], arm: str) -> List[ParticipantSeries]:
            series: Dict[str, ParticipantSeries] = {}
            for session_id in ids:
                try:
                    path = await registry.path(session_id)
                except KeyError:
                    raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
                header, footer = read_summary(path)
                participant = str(header["participant"])
                stem = os.path.basename(path)[: -len(".vcs")]
                _, sep, rep_label = stem.partition("__")
                entry = series.setdefault(participant, ParticipantSeries(participant, arm))
                entry.add(rep_label if sep else "baseline", footer)
            return list(series.values())

        cohort_all = await cohort(manifest_a, analytics.ARM_EXPERIMENTAL)
        cohort_all += await cohort(manifest_b, analytics.ARM_CONTROL)
        try:
            report = analytics.cohort_report(cohort_all, label=label)
        except analytics.AnalyticsError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return JSONResponse(analytics.report_dict(report))

    @app.get("/clips/{segment}")
    async def fetch_clip(segment: int, request: Request):
        check_http_auth(request)
        if clip_dir is None:
            raise HTTPException(status_code=404, detail="no clip store configured")
        try:
            clip = expert_clip(clip_dir, segment)
        except (FileNotFoundError, SessionFormatError) as e:
            raise HTTPException(status_code=404, detail=str(e))
        return PlainTextResponse(clip.record.dumps(), media_type="application/x-ndjson")

    @app.websocket("/ws/session")
    async def ws_session(ws: WebSocket):
        params = ws.query_params
        if token is not None and params.get("token") != token:
            await ws.close(code=CLOSE_BAD_TOKEN)
            return
        await ws.accept()
        mode = params.get("mode", "none")
        lockstep = params.get("lockstep", "0") in ("1", "true")
        participant = params.get("participant", "live")
        handedness = params.get("handedness", "R")
        seed = int(params.get("seed", "0"))
        session_id = f"{participant}-{time.strftime('%Y%m%d-%H%M%S')}-{os.urandom(3).hex()}"

        engine = Engine(
            config=config, mode=mode, participant=participant, handedness=handedness, seed=seed
        )

        async def close_malformed(reason: str) -> None:
            try:
                await ws.send_text(json.dumps({"error": reason}))
                await ws.close(code=CLOSE_MALFORMED)
            except RuntimeError:
                pass

        async def finish() -> None:
            # A connection that never drove two ticks has nothing to score.
            if len(engine.record.ticks) >= 2:
                await registry.store(session_id, engine.finalize())

        last_seq = -1
        pending_warnings: List[dict] = []

        if lockstep:
            # One input message drives exactly one engine tick; replies are
            # strictly ordered, which is what recorded-fixture tests need.
            while True:
                try:
                    text = await ws.receive_text()
                except WebSocketDisconnect:
                    await finish()
                    return
                try:
                    obj = json.loads(text)
                    seq, inp = _parse_client_input(obj, engine.world.tick + 1)
                except (KeyError, TypeError, ValueError, GeometryError) as e:
                    await close_malformed(f"malformed input: {e}")
                    await finish()
                    return
                if seq <= last_seq:
                    pending_warnings.append(
                        {"t": engine.world.tick, "kind": "SeqRegression", "payload": {"seq": seq}}
                    )
                    continue
                last_seq = seq
                try:
                    result = engine.step(inp)
                except (InputError, ProtocolError) as e:
                    await close_malformed(f"rejected input: {e}")
                    await finish()
                    return
                await ws.send_text(_server_state(engine, result, pending_warnings))
                pending_warnings = []
                if result.done:
                    await finish()
                    await ws.close()
                    return

        # Real-time: sample the latest input each fixed tick; missing input
        # holds the previous commanded state (last-writer-wins).
        latest: List[Optional[Tuple[int, dict]]] = [None]
        reader_error: List[Optional[str]] = [None]
        closed = asyncio.Event()

        async def reader() -> None:
            while True:
                try:
                    text = await ws.receive_text()
                except WebSocketDisconnect:
                    closed.set()
                    return
                try:
                    obj = json.loads(text)
                    seq = int(obj["seq"])
                except (KeyError, TypeError, ValueError) as e:
                    reader_error[0] = f"malformed input: {e}"
                    closed.set()
                    return
                if seq <= last_seq and latest[0] is not None:
                    pending_warnings.append(
                        {"t": engine.world.tick, "kind": "SeqRegression", "payload": {"seq": seq}}
                    )
                    continue
                latest[0] = (seq, obj)

        reader_task = asyncio.create_task(reader())
        period = 1.0 / config.tick_rate
        next_deadline = time.monotonic() + period
        try:
            while not closed.is_set():
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                    if closed.is_set():
                        break
                next_deadline += period
                tick = engine.world.tick + 1
                sampled = latest[0]
                if sampled is None:
                    inp = _hold_input(engine, tick)
                else:
                    nonlocal_seq, obj = sampled
                    try:
                        _, inp = _parse_client_input(obj, tick)
                    except (KeyError, TypeError, ValueError, GeometryError) as e:
                        await close_malformed(f"malformed input: {e}")
                        break
                    last_seq = max(last_seq, nonlocal_seq)
                try:
                    result = engine.step(inp)
                except (InputError, ProtocolError) as e:
                    await close_malformed(f"rejected input: {e}")
                    break
                try:
                    await ws.send_text(_server_state(engine, result, pending_warnings))
                except RuntimeError:
                    break
                pending_warnings = []
                if result.done:
                    await ws.close()
                    break
            if reader_error[0] is not None:
                await close_malformed(reader_error[0])
        finally:
            reader_task.cancel()
            await finish()

    return app
