"""Live steering service: WebSocket state snapshots plus scenario control.

One background task owns the engine and advances it in snapshot-sized chunks,
broadcasting JSON state at the configured rate; clients submit L/R/F commands
which are queued and latched at symbol slot boundaries (the latch is
acknowledged on the socket).  ``pace: "wall"`` tracks wall clock best-effort,
``"fast"`` free-runs (tests, batch replays).
"""

from __future__ import annotations

import asyncio
import json
import math
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from ..calibration import SteeringCalibration, calibrate, synthesize_session
from ..config import SimConfig
from ..optics import SimScene
from .loop import SimulationEngine
from .scenarios import PATH_ARC_CENTER, PATH_ARC_RADIUS, PATH_OFFSET_NORM

FALLBACK_PAGE = """<!doctype html>
<html><head><title>beamlink service</title></head>
<body style="font-family: monospace">
<h3>beamlink steering service</h3>
<p>No console assets configured.  Point <code>service.static_dir</code> at a
built console, or talk to <code>/ws</code> directly.</p>
<pre id="state">waiting for snapshots...</pre>
<script>
const ws = new WebSocket(`ws://${location.host}/ws`);
ws.onmessage = (e) => {
  document.getElementById("state").textContent = e.data;
};
</script>
</body></html>
"""


class SimService:
    """Mutable service state: the engine, its driver task, and clients."""

    def __init__(self, cfg: SimConfig, calib: SteeringCalibration):
        self.cfg = cfg
        self.calib = calib
        self.engine: SimulationEngine | None = None
        self.task: asyncio.Task | None = None
        self.clients: set[WebSocket] = set()
        self.scenario = ""
        self.pace = "wall"
        self.scene_info: dict | None = None
        self._acks_sent = 0

    def make_engine(self, name: str, seed: int | None) -> SimulationEngine:
        cfg = self.cfg
        path = None
        if name == "obstacle":
            scene = SimScene(cfg.scene, robot_xy=(-0.15, 0.0),
                             obstacles=[(0.0, 0.0, 0.03)])
        elif name == "path":
            r0 = PATH_ARC_RADIUS + PATH_OFFSET_NORM * 2 * cfg.robot.body_radius_m
            scene = SimScene(cfg.scene,
                             robot_xy=(PATH_ARC_CENTER[0] + r0, PATH_ARC_CENTER[1]),
                             heading_rad=math.pi / 2)
            path = {"center": list(PATH_ARC_CENTER), "radius": PATH_ARC_RADIUS}
        else:  # "free"
            scene = SimScene(cfg.scene, robot_xy=(0.0, 0.0))
        # everything the console needs to draw the testbed without owning
        # any physics of its own
        self.scene_info = {
            "testbedSize": cfg.scene.testbed_size_m,
            "robotRadius": cfg.robot.body_radius_m,
            "capCapacityMj": cfg.robot.cap_capacity_mj,
            "obstacles": [list(o) for o in scene.obstacles],
            "path": path,
        }
        return SimulationEngine(cfg, self.calib, scene=scene, seed=seed,
                                decode_rate_hz=cfg.channel.adc_rate_hz)

    async def start(self, name: str, seed: int | None, pace: str) -> None:
        await self.stop()
        self.engine = self.make_engine(name, seed)
        self.scenario = name
        self.pace = pace
        self._acks_sent = 0
        self.task = asyncio.create_task(self._drive())

    async def stop(self) -> None:
        if self.task is not None:
            self.task.cancel()
            try:
                await self.task
            except asyncio.CancelledError:
                pass
            self.task = None

    async def _drive(self) -> None:
        period = 1.0 / self.cfg.service.snapshot_rate_hz
        clock = asyncio.get_running_loop().time
        next_at = clock()
        while True:
            self.engine.advance(period)
            await self._broadcast(json.dumps(self.engine.snapshot()))
            while self._acks_sent < len(self.engine.acks):
                slot, sym = self.engine.acks[self._acks_sent]
                self._acks_sent += 1
                await self._broadcast(json.dumps(
                    {"ack": {"cmd": sym, "slot": slot}}))
            if self.pace != "wall":
                await asyncio.sleep(0)
                continue
            # deadline pacing: sleeping a fixed period on top of the advance
            # cost would run the session visibly slower than wall clock
            next_at += period
            delay = next_at - clock()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_at = clock()  # fell behind; skip the chase

    async def _broadcast(self, text: str) -> None:
        # clients may disconnect (mutating the set) while a send is awaited
        for ws in list(self.clients):
            try:
                await ws.send_text(text)
            except Exception:
                self.clients.discard(ws)


def default_calibration(cfg: SimConfig) -> SteeringCalibration:
    return calibrate(synthesize_session(cfg, noise_px=0.0), cfg.tol)


def build_app(cfg: SimConfig,
              calib: SteeringCalibration | None = None) -> FastAPI:
    svc = SimService(cfg, calib or default_calibration(cfg))

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        await svc.stop()

    app = FastAPI(title="beamlink service", lifespan=lifespan)
    app.state.sim = svc

    static_dir = cfg.service.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/static", StaticFiles(directory=static_dir), name="static")

    @app.get("/")
    async def index():
        if static_dir:
            page = Path(static_dir) / "index.html"
            if page.is_file():
                return HTMLResponse(page.read_text())
        return HTMLResponse(FALLBACK_PAGE)

    @app.get("/scenario")
    async def scenario_status():
        return {"running": svc.task is not None and not svc.task.done(),
                "scenario": svc.scenario, "pace": svc.pace,
                "scene": svc.scene_info}

    @app.post("/scenario")
    async def scenario_control(body: dict):
        action = body.get("action")
        if action == "start":
            name = body.get("name", "free")
            if name not in ("free", "obstacle", "path"):
                return JSONResponse({"error": f"unknown scenario {name!r}"},
                                    status_code=400)
            await svc.start(name, body.get("seed"),
                            body.get("pace", "wall"))
            return {"ok": True, "scenario": name}
        if action == "stop":
            await svc.stop()
            return {"ok": True}
        if action == "reset":
            name, pace = svc.scenario or "free", svc.pace
            await svc.start(name, None, pace)
            return {"ok": True, "scenario": name}
        return JSONResponse({"error": f"unknown action {action!r}"},
                            status_code=400)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        svc.clients.add(ws)
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps({"error": "bad json"}))
                    continue
                cmd = msg.get("cmd")
                if cmd is None or svc.engine is None:
                    await ws.send_text(json.dumps(
                        {"error": "no running scenario" if svc.engine is None
                         else "missing cmd"}))
                    continue
                try:
                    slot = svc.engine.push_command(cmd)
                except KeyError:
                    await ws.send_text(json.dumps(
                        {"error": f"unknown command {cmd!r}"}))
                    continue
                await ws.send_text(json.dumps(
                    {"queued": {"cmd": cmd, "slot": slot}}))
        except WebSocketDisconnect:
            pass
        finally:
            svc.clients.discard(ws)

    return app


def serve(cfg: SimConfig, calib: SteeringCalibration | None = None) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    app = build_app(cfg, calib)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port,
                log_level="warning")
