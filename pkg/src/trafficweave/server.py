"""WebSocket/HTTP simulation service for live and spectated episodes.

Wire protocol (UTF-8 JSON, all messages carry a ``v`` version field):

Server -> client, 10 Hz while an episode runs::

    {"v": 1, "type": "tick", "t": 12,
     "state": {"human": {"s":..., "tau":..., "s_dot":..., "tau_dot":...},
               "robot": {"s":..., "tau":..., "s_dot":..., "tau_dot":...,
                          "tau_ddot":...}},
     "plan": {"best_plan_code": 137, "committed_next": [[a,j],...]},
     "bands": {"human_s_q": [[...],[...],[...]], "human_tau_q": [...]},
     "alerts": ["overspeed"], "status": "running"}

Client -> server (driver role only)::

    {"v": 1, "type": "control", "throttle": 0.4, "steer": -0.1, "ts": 123.4}

Malformed client messages get ``{"v":1,"type":"error","reason":...}`` and
the connection stays open.  HTTP endpoints: ``POST /episodes`` (create),
``POST /episodes/{id}/start``, ``POST /episodes/{id}/abort``,
``GET /episodes/{id}/log``, ``GET /models``.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import os
import threading
import time
from dataclasses import replace

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .dynamics import DEFAULT_ROAD, JointState
from .episode import (
    EpisodeConfig,
    EpisodeLog,
    LiveHumanSource,
    ReplayHumanSpec,
    ScriptedHumanSpec,
    run_episode,
)
from .model import BehaviorModel
from .planner import PlannerConfig
from .sampler import FastSampler
from .synth import InitialCondition, ScriptedDriverParams

PROTOCOL_VERSION = 1


def state_json(x: JointState) -> dict:
    return {
        "human": {"s": x.human.s, "tau": x.human.tau,
                  "s_dot": x.human.s_dot, "tau_dot": x.human.tau_dot},
        "robot": {"s": x.robot.s, "tau": x.robot.tau, "s_dot": x.robot.s_dot,
                  "tau_dot": x.robot.tau_dot, "tau_ddot": x.robot.tau_ddot},
    }


class EpisodeSession:
    def __init__(self, session_id: str, config: EpisodeConfig,
                 sampler: FastSampler, pace: bool) -> None:
        self.id = session_id
        self.config = config
        self.sampler = sampler
        self.pace = pace
        self.status = "created"
        self.log: EpisodeLog | None = None
        self.error: str | None = None
        self.live = LiveHumanSource()
        self.driver_connected = False
        self._abort = threading.Event()
        self._thread: threading.Thread | None = None
        self._subscribers: set[asyncio.Queue] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._lock = threading.Lock()

    # -- broadcasting --------------------------------------------------------

    def subscribe(self, loop: asyncio.AbstractEventLoop) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue()
        with self._lock:
            self._loop = loop
            self._subscribers.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        with self._lock:
            self._subscribers.discard(q)

    def broadcast(self, msg: dict) -> None:
        with self._lock:
            loop = self._loop
            subs = list(self._subscribers)
        if loop is None:
            return
        for q in subs:
            loop.call_soon_threadsafe(q.put_nowait, msg)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        if self.status != "created":
            raise RuntimeError(f"episode {self.id} already {self.status}")
        self.status = "running"
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def abort(self) -> None:
        self._abort.set()

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def _run(self) -> None:
        dt = DEFAULT_ROAD.dt
        next_deadline = time.monotonic() + dt

        def on_tick(x: JointState, info: dict) -> None:
            nonlocal next_deadline
            plan = info.get("plan") or {}
            self.broadcast({
                "v": PROTOCOL_VERSION, "type": "tick", "t": x.t,
                "state": state_json(x),
                "plan": {"best_plan_code": plan.get("best_plan_code"),
                         "committed_next": plan.get("committed_next")},
                "bands": plan.get("summary"),
                "alerts": info["alerts"],
                "near_collision": info["near_collision"],
                "status": "running",
            })
            if self.pace:
                now = time.monotonic()
                if next_deadline > now:
                    time.sleep(next_deadline - now)
                next_deadline = max(next_deadline + dt, time.monotonic())

        try:
            src = self.live if self._wants_live() else None
            self.log = run_episode(self.config, self.sampler,
                                   human_source=src, on_tick=on_tick,
                                   stop=self._abort.is_set)
            self.status = "aborted" if self._abort.is_set() else "done"
        except Exception as e:
            self.status = "failed"
            self.error = f"{type(e).__name__}: {e}"
        self.broadcast({"v": PROTOCOL_VERSION, "type": "status",
                        "status": self.status,
                        "outcome": self.log.trial.outcome if self.log else None,
                        "error": self.error})

    def _wants_live(self) -> bool:
        from .episode import LiveHumanSpec
        return isinstance(self.config.human_source, LiveHumanSpec)


def _parse_planner(body: dict) -> PlannerConfig:
    cfg = PlannerConfig()
    overrides = body.get("planner") or {}
    allowed = {"n_windows", "window_steps", "stage1_samples",
               "stage2_samples", "top_k"}
    bad = set(overrides) - allowed
    if bad:
        raise HTTPException(422, f"unknown planner fields: {sorted(bad)}")
    return replace(cfg, **overrides)


def create_app(model_dir: str, default_model: str | None = None) -> FastAPI:
    app = FastAPI(title="trafficweave sim service")
    sessions: dict[str, EpisodeSession] = {}
    samplers: dict[str, FastSampler] = {}
    counter = itertools.count(1)

    def model_names() -> list[str]:
        return sorted(f for f in os.listdir(model_dir) if f.endswith(".npz"))

    def get_sampler(name: str) -> FastSampler:
        if name not in samplers:
            path = os.path.join(model_dir, name)
            if not os.path.exists(path):
                raise HTTPException(404, f"model {name!r} not found")
            samplers[name] = FastSampler(BehaviorModel.load(path))
        return samplers[name]

    @app.get("/models")
    def list_models() -> dict:
        return {"v": PROTOCOL_VERSION, "models": model_names()}

    @app.post("/episodes")
    def create_episode(body: dict) -> dict:
        try:
            ic = InitialCondition(**(body.get("ic") or {}))
        except (TypeError, ValueError) as e:
            raise HTTPException(422, f"bad initial condition: {e}")
        source_kind = body.get("human_source", "scripted")
        if source_kind == "scripted":
            try:
                params = ScriptedDriverParams(**(body.get("scripted_params") or {}))
            except TypeError as e:
                raise HTTPException(422, f"bad scripted params: {e}")
            source = ScriptedHumanSpec(params=params)
        elif source_kind == "replay":
            from .trialio import import_trials
            path = body.get("replay_trial_path")
            if not path or not os.path.exists(path):
                raise HTTPException(422, "replay requires replay_trial_path")
            trials = import_trials(path)
            wanted = body.get("replay_trial_id")
            match = [t for t in trials if wanted is None or t.id == wanted]
            if not match:
                raise HTTPException(422, f"trial {wanted!r} not in {path}")
            source = ReplayHumanSpec(trial=match[0])
        elif source_kind == "live":
            from .episode import LiveHumanSpec
            source = LiveHumanSpec()
        else:
            raise HTTPException(422, f"unknown human_source {source_kind!r}")

        model_name = body.get("model") or default_model
        if model_name is None:
            names = model_names()
            if not names:
                raise HTTPException(422, "no models available")
            model_name = names[0]
        sampler = get_sampler(model_name)

        config = EpisodeConfig(
            ic=ic, human_source=source,
            model_path=os.path.join(model_dir, model_name),
            planner=_parse_planner(body),
            seed=int(body.get("seed", 0)),
            robot_target_lane=body.get("robot_target_lane", "left"),
            real_time=bool(body.get("pace", True)),
            max_steps=int(body.get("max_steps", 300)),
        )
        session_id = f"ep-{next(counter)}"
        sessions[session_id] = EpisodeSession(
            session_id, config, sampler, pace=bool(body.get("pace", True)))
        return {"v": PROTOCOL_VERSION, "id": session_id,
                "model": model_name, "status": "created"}

    def _get(session_id: str) -> EpisodeSession:
        if session_id not in sessions:
            raise HTTPException(404, f"unknown episode {session_id!r}")
        return sessions[session_id]

    @app.post("/episodes/{session_id}/start")
    def start_episode(session_id: str) -> dict:
        session = _get(session_id)
        try:
            session.start()
        except RuntimeError as e:
            raise HTTPException(409, str(e))
        return {"v": PROTOCOL_VERSION, "id": session_id, "status": session.status}

    @app.post("/episodes/{session_id}/abort")
    def abort_episode(session_id: str) -> dict:
        session = _get(session_id)
        session.abort()
        session.join(timeout=30.0)
        return {"v": PROTOCOL_VERSION, "id": session_id, "status": session.status}

    @app.get("/episodes/{session_id}/log")
    def episode_log(session_id: str) -> dict:
        session = _get(session_id)
        session.join(timeout=0.0)
        if session.log is None:
            raise HTTPException(409, f"episode {session_id} has no log yet "
                                     f"(status {session.status})")
        log = session.log
        return {
            "v": PROTOCOL_VERSION, "id": session_id, "status": session.status,
            "outcome": log.trial.outcome,
            "completed": log.completed,
            "degraded": log.degraded or not session.live.connected,
            "near_collision_steps": log.near_collision_steps,
            "deadline_misses": log.deadline_misses,
            "trajectory": [dict(t=x.t, **state_json(x)) for x in log.trial.trajectory],
            "actions": [[u_h.s_ddot, u_h.tau_ddot, u_r.s_ddot, u_r.tau_dddot]
                        for u_h, u_r in log.trial.actions],
            "plans": log.plans,
        }

    @app.websocket("/episodes/{session_id}/ws")
    async def episode_ws(ws: WebSocket, session_id: str, role: str = "spectator"):
        await ws.accept()
        if session_id not in sessions:
            await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                "reason": f"unknown episode {session_id!r}"})
            await ws.close()
            return
        session = sessions[session_id]
        if role == "driver":
            if session.driver_connected:
                await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                    "reason": "driver seat already taken"})
                await ws.close()
                return
            session.driver_connected = True
        elif role != "spectator":
            await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                "reason": f"unknown role {role!r}"})
            await ws.close()
            return

        queue = session.subscribe(asyncio.get_running_loop())
        await ws.send_json({"v": PROTOCOL_VERSION, "type": "hello",
                            "role": role, "episode": session_id,
                            "status": session.status})

        async def pump_out() -> None:
            while True:
                await ws.send_json(await queue.get())

        async def pump_in() -> None:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                    if msg.get("type") != "control":
                        raise ValueError(f"unexpected type {msg.get('type')!r}")
                    throttle = float(msg["throttle"])
                    steer = float(msg["steer"])
                except (ValueError, KeyError, TypeError) as e:
                    await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                        "reason": f"malformed control: {e}"})
                    continue
                if role == "driver":
                    session.live.update(throttle, steer)
                else:
                    await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                        "reason": "spectators cannot drive"})

        out_task = asyncio.create_task(pump_out())
        in_task = asyncio.create_task(pump_in())
        try:
            done, pending = await asyncio.wait(
                {out_task, in_task}, return_when=asyncio.FIRST_EXCEPTION)
            for task in pending:
                task.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            out_task.cancel()
            in_task.cancel()
            session.unsubscribe(queue)
            if role == "driver":
                session.driver_connected = False
                session.live.disconnect()

    return app
