"""HTTP/JSON service around the advisor: scenario sessions, event injection,
recommendation decisions, dry runs, plan/RTTI/KPI views and an ordered
long-poll stream.

One advisor per scenario id; every mutation of a session happens under its
lock, so the advisor sees a serialized event queue.  Sessions whose scenario
t0 is close to the present run on the wall clock (TTLs expire for real);
scripted scenarios keep their frozen clock so behavior stays reproducible.
"""
from __future__ import annotations

import asyncio
import itertools
import threading
import time
from dataclasses import dataclass, field

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import JSONResponse

from .advisor import (
    Advisor,
    AdvisorError,
    DecisionError,
    adhoc_event_from_dict,
)
from .fleet import plan_to_dict, plan_to_geojson
from .network import GraphError
from .sim import Scenario, ScenarioError, plan_kpis, scenario_from_dict, validate_scenario
from .traffic import EventError, publish_rtti

WALL_CLOCK_WINDOW_S = 48 * 3600.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def response(self) -> JSONResponse:
        return JSONResponse(status_code=self.status, content={
            "code": self.code, "message": self.message, "detail": self.detail,
        })


@dataclass
class Session:
    scenario: Scenario
    advisor: Advisor
    lock: threading.Lock = field(default_factory=threading.Lock)
    wall_clock: bool = False

    def touch_clock(self) -> None:
        if self.wall_clock:
            now = time.time()
            if now > self.advisor.clock:
                self.advisor.advance_clock(now)


def create_app() -> FastAPI:
    app = FastAPI(title="logistics advisor service")
    sessions: dict[str, Session] = {}
    ids = itertools.count(1)
    app.state.sessions = sessions

    def get_session(scenario_id: str) -> Session:
        session = sessions.get(scenario_id)
        if session is None:
            raise ApiError(404, "scenario_not_found", f"no scenario {scenario_id!r}")
        session.touch_clock()
        return session

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(ScenarioError)
    async def handle_scenario_error(request: Request, exc: ScenarioError):
        return ApiError(400, "invalid_scenario", str(exc)).response()

    @app.exception_handler(DecisionError)
    async def handle_decision_error(request: Request, exc: DecisionError):
        text = str(exc)
        if "unknown" in text:
            return ApiError(404, "recommendation_not_found", text).response()
        return ApiError(409, "decision_conflict", text).response()

    @app.exception_handler(AdvisorError)
    async def handle_advisor_error(request: Request, exc: AdvisorError):
        return ApiError(400, "invalid_request", str(exc)).response()

    @app.exception_handler(EventError)
    async def handle_event_error(request: Request, exc: EventError):
        return ApiError(400, "invalid_event", str(exc)).response()

    @app.exception_handler(GraphError)
    async def handle_graph_error(request: Request, exc: GraphError):
        return ApiError(400, "invalid_graph", str(exc)).response()

    def load_scenario(raw: dict) -> str:
        scenario = scenario_from_dict(raw)
        graph = validate_scenario(scenario)
        advisor = Advisor(graph, scenario.vehicles,
                          [o for o in scenario.orders if o.announce_time <= scenario.t0],
                          scenario.weights, scenario.knobs,
                          seed=scenario.seed, t0=scenario.t0)
        advisor.miss_probability_by_kind = {
            "customer": scenario.noise.miss_probability}
        advisor.daily_orchestration()
        scenario_id = f"s{next(ids)}"
        sessions[scenario_id] = Session(
            scenario=scenario,
            advisor=advisor,
            wall_clock=abs(scenario.t0 - time.time()) < WALL_CLOCK_WINDOW_S,
        )
        return scenario_id

    app.state.load_scenario = load_scenario

    @app.post("/scenarios", status_code=201)
    def post_scenario(raw: dict = Body(...)):
        scenario_id = load_scenario(raw)
        session = sessions[scenario_id]
        return {"id": scenario_id, "version": session.advisor.version,
                "objective": session.advisor.plan.objective}

    @app.get("/scenarios/{scenario_id}/state")
    def get_state(scenario_id: str):
        session = get_session(scenario_id)
        with session.lock:
            return session.advisor.state_dict()

    @app.post("/scenarios/{scenario_id}/events", status_code=201)
    def post_event(scenario_id: str, raw: dict = Body(...)):
        session = get_session(scenario_id)
        with session.lock:
            event = adhoc_event_from_dict(raw)
            rec = session.advisor.handle_event(event)
            return rec.to_dict()

    @app.get("/scenarios/{scenario_id}/recommendations")
    def get_recommendations(scenario_id: str, status: str | None = Query(default=None)):
        session = get_session(scenario_id)
        with session.lock:
            recs = [r.to_dict() for r in session.advisor.recommendations.values()
                    if status is None or r.status == status]
            recs.sort(key=lambda r: r["sequence"])
            return recs

    @app.post("/scenarios/{scenario_id}/recommendations/{rec_id}/decision")
    def post_decision(scenario_id: str, rec_id: str, body: dict = Body(...)):
        session = get_session(scenario_id)
        verdict = body.get("verdict")
        if verdict not in ("accept", "reject"):
            raise ApiError(400, "invalid_verdict",
                           "verdict must be 'accept' or 'reject'", str(body))
        with session.lock:
            rec = session.advisor.decide(rec_id, verdict)
            return rec.to_dict()

    @app.post("/scenarios/{scenario_id}/dry-run")
    def post_dry_run(scenario_id: str, raw: dict = Body(...)):
        session = get_session(scenario_id)
        with session.lock:
            event = adhoc_event_from_dict(raw)
            rec = session.advisor.dry_run(event)
            return rec.to_dict()

    @app.get("/scenarios/{scenario_id}/plan")
    def get_plan(scenario_id: str, format: str = Query(default="json")):
        session = get_session(scenario_id)
        with session.lock:
            advisor = session.advisor
            if format == "geojson":
                return plan_to_geojson(advisor.plan, advisor.graph, advisor.orders)
            if format == "json":
                payload = plan_to_dict(advisor.plan)
                payload["version"] = advisor.version
                return payload
            raise ApiError(400, "invalid_format", f"unknown plan format {format!r}")

    @app.get("/scenarios/{scenario_id}/rtti")
    def get_rtti(scenario_id: str):
        session = get_session(scenario_id)
        with session.lock:
            advisor = session.advisor
            snapshot = publish_rtti(advisor.graph, advisor.events,
                                    session.scenario.monitored_routes, advisor.clock)
            return snapshot.to_dict()

    @app.get("/scenarios/{scenario_id}/kpis")
    def get_kpis(scenario_id: str):
        session = get_session(scenario_id)
        with session.lock:
            advisor = session.advisor
            report = plan_kpis(advisor.plan, advisor.vehicles, advisor.orders,
                               session.scenario.weights.w_late)
            return report.to_dict()

    @app.get("/scenarios/{scenario_id}/stream")
    async def get_stream(scenario_id: str, after: int = Query(default=0),
                         timeout_s: float = Query(default=10.0, le=30.0)):
        session = get_session(scenario_id)
        deadline = time.monotonic() + max(0.0, timeout_s)
        while True:
            with session.lock:
                messages = [m for m in session.advisor.stream if m["seq"] > after]
            if messages or time.monotonic() >= deadline:
                return {"messages": messages,
                        "last_seq": messages[-1]["seq"] if messages else after}
            await asyncio.sleep(0.05)

    return app


app = create_app()
