"""HTTP gateway: live evaluation sessions with streaming telemetry.

One session owns one episode; control requests (advance, rate, intent patches)
serialize through the session lock and land at step boundaries, so a frame
never mixes two utility definitions.  Any number of stream subscribers read
the same ordered frame list.

Wire formats are documented in docs/formats.md; frames carry schema_version.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from typing import Iterator, Mapping

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse

from . import netsim
from .agents import AgentPolicy, derive_roster
from .experiments import Scenario, load_scenario, training_intents
from .supervisor import EpisodeRunner, StepRecord, SupervisorModel
from .utility import Expectation, IntentSet, UtilityForm

SCHEMA_VERSION = 1

_VALID_FORMS = {f.value for f in UtilityForm}


def expectation_json(e: Expectation) -> dict:
    return {
        "id": e.id,
        "service": e.service.value,
        "kpi": e.kpi.value,
        "target": e.target,
        "direction": e.direction.value,
        "range": [e.range_lo, e.range_hi],
        "form": e.form.value,
        "priority": e.priority,
    }


def frame_json(rec: StepRecord, intents: IntentSet) -> dict:
    k = rec.kpis
    return {
        "schema_version": SCHEMA_VERSION,
        "step": rec.step,
        "kpis": {
            "qoe_cv": k.qoe_cv,
            "pl_urllc_pct": k.pl_urllc_pct,
            "pl_miot_pct": k.pl_miot_pct,
            "latency_urllc_ms": k.latency_urllc_ms,
            "latency_miot_ms": k.latency_miot_ms,
            "power_miot": k.power_miot,
        },
        "deviations": dict(rec.deviations),
        "features": dict(rec.features),
        "utility": rec.reward,
        "goals": {"indices": dict(rec.goal_indices), "values": dict(rec.goal_values)},
        "intents": [expectation_json(e) for e in intents],
        "mutated": rec.mutated,
    }


class Session:
    """One live episode plus its frame log and subscriber bookkeeping."""

    def __init__(
        self,
        session_id: str,
        scenario: Scenario,
        model_label: str,
        model: SupervisorModel,
        policies: Mapping[str, AgentPolicy],
        seed: int,
    ):
        self.id = session_id
        self.scenario = scenario
        self.model_label = model_label
        self.model = model
        self.checksum_at_create = model.checksum()
        self.runner = EpisodeRunner(
            model,
            policies,
            scenario.config,
            scenario.intents,
            scenario.horizon,
            seed=(scenario.noise_key(), seed),
            mode="eval",
            deviation_mode=scenario.deviation_mode,
            agent_eps=scenario.agent_eps,
            schedule=scenario.schedule,
            initial_state=netsim.cold_start(scenario.config),
        )
        self.seed = seed
        self.paused = True
        self.rate = 0.0
        self.frames: list[dict] = []
        self.lock = threading.Lock()
        self.new_frame = threading.Condition(self.lock)
        self._stepper: threading.Thread | None = None

    # -- state ----------------------------------------------------------

    @property
    def status(self) -> str:
        if self.runner.done:
            return "finished"
        return "paused" if self.paused else "running"

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "scenario": self.scenario.name,
            "model": self.model_label,
            "seed": self.seed,
            "status": self.status,
            "step": self.runner.t,
            "horizon": self.scenario.horizon,
            "frames_emitted": len(self.frames),
            "intents": [expectation_json(e) for e in self.current_intents()],
            "pending_mutation": self.runner._pending is not None,
            "model_checksum": self.model.checksum(),
        }

    def current_intents(self) -> IntentSet:
        # what the next step will run under: queued patch wins
        return self.runner._pending if self.runner._pending is not None else self.runner.intents

    # -- stepping -------------------------------------------------------

    def step_once_locked(self) -> None:
        rec = self.runner.step()
        self.frames.append(frame_json(rec, self.runner.intents))
        self.new_frame.notify_all()

    def advance(self, steps: int) -> dict:
        with self.lock:
            if self.runner.done:
                raise HTTPException(status_code=409, detail="session already finished")
            for _ in range(steps):
                if self.runner.done:
                    break
                self.step_once_locked()
            return self.snapshot()

    def set_rate(self, rate: float) -> dict:
        with self.lock:
            if self.runner.done:
                raise HTTPException(status_code=409, detail="session already finished")
            self.rate = rate
            self.paused = rate <= 0
            if not self.paused and (self._stepper is None or not self._stepper.is_alive()):
                self._stepper = threading.Thread(target=self._run_stepper, daemon=True)
                self._stepper.start()
            return self.snapshot()

    def _run_stepper(self) -> None:
        while True:
            with self.lock:
                if self.paused or self.runner.done:
                    self.new_frame.notify_all()
                    return
                delay = 1.0 / self.rate
                self.step_once_locked()
                if self.runner.done:
                    return
            time.sleep(delay)

    # -- mutations ------------------------------------------------------

    def patch_intents(self, changes: Mapping[str, Mapping]) -> dict:
        with self.lock:
            if self.runner.done:
                raise HTTPException(status_code=409, detail="session already finished")
            base = self.current_intents()
            if not changes:
                return {"acknowledged": True, "noop": True, "effective_step": None,
                        "intents": [expectation_json(e) for e in base]}
            updated = base
            for exp_id, patch in changes.items():
                if exp_id not in base:
                    raise HTTPException(status_code=400,
                                        detail=f"unknown expectation {exp_id!r}")
                extra = set(patch) - {"priority", "form"}
                if extra:
                    raise HTTPException(status_code=400,
                                        detail=f"unsupported patch keys {sorted(extra)}")
                if "priority" in patch:
                    try:
                        priority = float(patch["priority"])
                    except (TypeError, ValueError):
                        raise HTTPException(status_code=400,
                                            detail="priority must be a number")
                    if priority <= 0:
                        raise HTTPException(status_code=400,
                                            detail="priority must be positive")
                    updated = updated.with_priority(exp_id, priority)
                if "form" in patch:
                    form = patch["form"]
                    if form not in _VALID_FORMS:
                        raise HTTPException(
                            status_code=400,
                            detail=f"form must be one of {sorted(_VALID_FORMS)}")
                    updated = updated.with_form(exp_id, UtilityForm(form))
            self.runner.queue_intents(updated)
            return {
                "acknowledged": True,
                "noop": False,
                "effective_step": self.runner.t,
                "intents": [expectation_json(e) for e in updated],
            }

    # -- streaming ------------------------------------------------------

    def iter_frames(self, from_step: int) -> Iterator[str]:
        idx = max(0, from_step)
        while True:
            with self.lock:
                while idx >= len(self.frames) and not self.runner.done:
                    self.new_frame.wait(timeout=1.0)
                batch = self.frames[idx:]
                done = self.runner.done
            for frame in batch:
                yield json.dumps(frame, sort_keys=True) + "\n"
            idx += len(batch)
            if done and idx >= len(self.frames):
                return


def build_app(
    scenario: Scenario,
    models: Mapping[str, SupervisorModel],
    policies: Mapping[str, AgentPolicy],
) -> FastAPI:
    """App serving the given scenario's trained stack.

    Sessions may also reference other loadable scenarios, as long as their
    derived roster matches the trained models (same agent names).
    """
    app = FastAPI(title="imfkit gateway")
    # the operator console is served from its own origin (file:// or a dev
    # server); the gateway carries no credentials, so a blanket allow is fine
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    roster_names = [spec.name for spec in next(iter(models.values())).roster]

    def resolve_scenario(name: str) -> Scenario:
        if name == scenario.name:
            return scenario
        try:
            other = load_scenario(name)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"unknown scenario {name!r}")
        other_names = [
            spec.name
            for spec in derive_roster(training_intents(other), other.config)
        ]
        if other_names != roster_names:
            raise HTTPException(
                status_code=400,
                detail=f"scenario {name!r} needs agents {other_names}, "
                       f"models were trained for {roster_names}",
            )
        return other

    def get_session(session_id: str) -> Session:
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail="no such session")
        return sessions[session_id]

    @app.get("/scenarios")
    def list_scenarios() -> dict:
        return {"default": scenario.name, "models": sorted(models)}

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict = Body(default={})) -> dict:
        name = payload.get("scenario", scenario.name)
        label = payload.get("model", "proposed")
        if label not in models:
            raise HTTPException(status_code=404,
                                detail=f"unknown model {label!r}; have {sorted(models)}")
        seed = int(payload.get("seed", 0))
        scen = resolve_scenario(name)
        session = Session(uuid.uuid4().hex, scen, label, models[label], policies, seed)
        sessions[session.id] = session
        return session.snapshot()

    @app.get("/sessions/{session_id}")
    def read_session(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            return session.snapshot()

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str, payload: dict = Body(default={})) -> dict:
        steps = int(payload.get("steps", 1))
        if steps < 1:
            raise HTTPException(status_code=400, detail="steps must be >= 1")
        return get_session(session_id).advance(steps)

    @app.post("/sessions/{session_id}/rate")
    def set_rate(session_id: str, payload: dict = Body(...)) -> dict:
        if "steps_per_second" not in payload:
            raise HTTPException(status_code=400, detail="steps_per_second required")
        rate = float(payload["steps_per_second"])
        if rate < 0:
            raise HTTPException(status_code=400, detail="steps_per_second must be >= 0")
        return get_session(session_id).set_rate(rate)

    @app.patch("/sessions/{session_id}/intents")
    def patch_intents(session_id: str, payload: dict = Body(...)) -> dict:
        changes = payload.get("changes", {})
        if not isinstance(changes, dict):
            raise HTTPException(status_code=400, detail="changes must be an object")
        return get_session(session_id).patch_intents(changes)

    @app.get("/sessions/{session_id}/stream")
    def stream(session_id: str, from_step: int = 0) -> StreamingResponse:
        session = get_session(session_id)
        return StreamingResponse(
            session.iter_frames(from_step), media_type="application/x-ndjson"
        )

    return app
