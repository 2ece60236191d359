"""HTTP surface for the gateway: pending-action review, audit stream, health.

The wire contract is consumed by the review console. Decisions require the
static reviewer token; reads are open. In scenario-serving mode a replay
runs on a background thread and blocks on escalations until a reviewer
decides or the deadline expires, so the review loop can be exercised
end to end.
"""

from __future__ import annotations

import threading
from typing import Any, Optional

from fastapi import FastAPI, Header, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from agentgate.core import Decision
from agentgate.execguard import AlreadyDecided, PendingState, UnknownPending
from agentgate.gateway import Gateway


class DecisionRequest(BaseModel):
    decision: str  # approve | deny
    reviewer: str


class ReplayRunner:
    """Background replay whose result becomes available when it finishes."""

    def __init__(self, target) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._target = target
        self.result: Optional[Any] = None
        self.error: Optional[str] = None
        self.done = threading.Event()

    def _run(self) -> None:
        try:
            self.result = self._target()
        except Exception as exc:  # surfaced via /replay/result
            self.error = f"{type(exc).__name__}: {exc}"
        finally:
            self.done.set()

    def start(self) -> None:
        self._thread.start()


def _pending_summary(action) -> dict[str, Any]:
    return {
        "id": action.id,
        "risk": action.risk,
        "state": action.state.value,
        "created_at": action.created_at,
        "deadline": action.deadline,
        "goal": action.provenance.get("plan_goal", ""),
        "decided_by": action.decided_by,
    }


def create_app(gateway: Gateway, replay_runner: Optional[ReplayRunner] = None) -> FastAPI:
    app = FastAPI(title="agentgate", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {
            "status": "ok",
            "manifest_hash": gateway.manifest.manifest_hash if gateway.manifest else None,
            "audit_events": len(gateway.audit),
            "chain_verifies": gateway.audit.verify(),
        }

    @app.get("/pending")
    def list_pending() -> list[dict[str, Any]]:
        return [_pending_summary(a) for a in gateway.pending.list_all()]

    @app.get("/pending/{action_id}")
    def pending_detail(action_id: str) -> dict[str, Any]:
        try:
            action = gateway.pending.get(action_id)
        except UnknownPending:
            raise HTTPException(404, detail={"code": "UnknownPending", "id": action_id})
        record = action.to_record()
        record["risk_breakdown"] = {
            "weights": {"irreversibility": 0.4, "privilege_breadth": 0.3,
                        "alignment_deficit": 0.3},
        }
        return record

    @app.post("/pending/{action_id}/decision")
    def decide(action_id: str, body: DecisionRequest,
               x_reviewer_token: str = Header(default="")) -> dict[str, Any]:
        if x_reviewer_token != gateway.config.reviewer_token:
            raise HTTPException(401, detail={"code": "BadReviewerToken"})
        if body.decision not in ("approve", "deny"):
            raise HTTPException(422, detail={"code": "BadDecision", "decision": body.decision})
        try:
            resolved = gateway.resolve_pending(action_id, body.decision, body.reviewer)
        except UnknownPending:
            raise HTTPException(404, detail={"code": "UnknownPending", "id": action_id})
        except AlreadyDecided as exc:
            raise HTTPException(409, detail={"code": "AlreadyDecided", "message": str(exc)})
        return resolved.to_record()

    @app.get("/audit")
    def audit(since: int = 0) -> list[dict[str, Any]]:
        return [ev.to_record() for ev in gateway.audit.events if ev.seq >= since]

    @app.get("/replay/result")
    def replay_result() -> dict[str, Any]:
        if replay_runner is None:
            raise HTTPException(404, detail={"code": "NoReplayConfigured"})
        if not replay_runner.done.is_set():
            return {"state": "running"}
        if replay_runner.error:
            return {"state": "error", "error": replay_runner.error}
        result = replay_runner.result
        return {
            "state": "done",
            "scenario_id": result.scenario_id,
            "fired_layer": result.fired_layer.value if result.fired_layer else None,
            "attack_succeeded": result.attack_succeeded,
            "outputs": list(result.outputs),
        }

    return app


def serve(gateway: Gateway, replay_runner: Optional[ReplayRunner] = None,
          host: Optional[str] = None, port: Optional[int] = None) -> None:
    import uvicorn

    app = create_app(gateway, replay_runner)
    if replay_runner is not None:
        replay_runner.start()
    uvicorn.run(app, host=host or gateway.config.listen_host,
                port=port or gateway.config.listen_port, log_level="warning")
