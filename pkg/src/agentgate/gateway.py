"""Pipeline orchestration: routes lifecycle events through the five layers.

Install-time events hit the foundation layer; runtime events flow input ->
cognitive -> decision -> execution, short-circuiting on the first
non-allow verdict. Every verdict lands on the audit chain. A disabled
layer records an explicit pass-through allow so transcripts stay complete
and deterministic under ablation. Escalated plans park in the pending
queue; an unresolved escalation expires to a deny.
"""

from __future__ import annotations

import json
import shlex
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from agentgate.core import (
    AuditChain,
    AuditEvent,
    Decision,
    Layer,
    Origin,
    TaggedSegment,
    TrustTier,
    Verdict,
    allow,
    deny,
    sha256_hex,
)
from agentgate.execguard import (
    ChainFinding,
    ClassifierFailure,
    PendingAction,
    PendingQueue,
    PendingState,
    analyze_chain,
    check_capability,
    classify_command,
    compute_risk,
)
from agentgate.foundation import (
    AgentConfig,
    DeploymentPolicy,
    SkillPackage,
    ToolInfo,
    ToolRegistry,
    TrustedExecutionManifest,
    VettingPolicy,
    build_manifest,
    vet_skill,
)
from agentgate.inputguard import respond as firewall_respond
from agentgate.inputguard import scan as firewall_scan
from agentgate.inputguard import segment as segment_content
from agentgate.memguard import (
    EntryKind,
    FrozenObjective,
    MemoryStore,
    MemoryVault,
    drift_score,
)
from agentgate.patterns import Action, Capability, Domain
from agentgate.plancheck import PolicyRule, decide as plan_decide


class GatewayError(Exception):
    pass


class NotInitialized(GatewayError):
    """Runtime event arrived before a manifest was provisioned."""


@dataclass(frozen=True)
class GatewayConfig:
    enabled_layers: frozenset[Layer] = frozenset(Layer)
    t_sanitize: float = 0.5
    t_quarantine: float = 0.8
    t_drift: float = 0.6
    t_align: float = 0.35
    risk_escalate: float = 0.5
    risk_deny: float = 0.8
    drift_window: int = 3
    hitl_deadline_ms: int = 0  # 0 = unresolved escalations expire immediately
    listen_host: str = "127.0.0.1"
    listen_port: int = 8787
    reviewer_token: str = "reviewer-token"

    def __post_init__(self) -> None:
        for name in ("t_sanitize", "t_quarantine", "t_drift", "t_align",
                     "risk_escalate", "risk_deny"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} out of range: {value}")
        if self.t_sanitize > self.t_quarantine:
            raise ValueError("sanitize threshold above quarantine threshold")
        if self.risk_escalate > self.risk_deny:
            raise ValueError("risk bands out of order")

    @classmethod
    def from_file(cls, path: str | Path) -> "GatewayConfig":
        rec = json.loads(Path(path).read_text("utf-8"))
        layers = rec.pop("enabled_layers", None)
        if layers is not None:
            rec["enabled_layers"] = frozenset(Layer(l) for l in layers)
        return cls(**rec)


@dataclass(frozen=True)
class PolicyBundle:
    """The versioned policy surface whose digest the manifest anchors.

    Covers the deployment requirements, declarative plan rules, session
    grants, resource budgets, and the malicious-signature file digest, so a
    change to any of them re-provisions to a different manifest hash.
    """

    deployment: DeploymentPolicy
    rules: tuple[dict[str, Any], ...] = ()
    grants: tuple[str, ...] = ()
    budget: tuple[tuple[str, Any], ...] = ()
    signature_file_digest: str = ""

    # build_manifest validates configs through the same policy object
    @property
    def require_sandbox(self) -> bool:
        return self.deployment.require_sandbox

    @property
    def require_signature_verification(self) -> bool:
        return self.deployment.require_signature_verification

    @property
    def capability_ceiling(self) -> tuple[str, ...]:
        return self.deployment.capability_ceiling

    def to_record(self) -> dict[str, Any]:
        return {
            "deployment": self.deployment.to_record(),
            "rules": [dict(r) for r in self.rules],
            "grants": list(self.grants),
            "budget": [list(b) for b in self.budget],
            "signature_file_digest": self.signature_file_digest,
        }


def signature_file_digest() -> str:
    from importlib import resources

    data = resources.files("agentgate.data").joinpath("signatures.txt").read_bytes()
    return sha256_hex(data)


class LogicalClock:
    """Deterministic millisecond clock for reproducible transcripts."""

    def __init__(self, start_ms: int = 1_700_000_000_000, step_ms: int = 1_000):
        self._now = start_ms
        self._step = step_ms
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def tick(self) -> int:
        with self._lock:
            self._now += self._step
            return self._now


class WallClock:
    def now(self) -> int:
        import time
        return int(time.time() * 1000)

    def tick(self) -> int:
        return self.now()


@dataclass
class ExecOutcome:
    executed: bool
    output: str = ""


class SimulatedExecutor:
    """Deterministic executor for replay: virtual effects, stubbed results."""

    def __init__(self, tool_outputs: Optional[dict[str, str]] = None,
                 command_results: Optional[dict[str, str]] = None):
        self.tool_outputs = tool_outputs or {}
        self.command_results = command_results or {}

    def run_command(self, session: "Session", command: str) -> ExecOutcome:
        return ExecOutcome(executed=True,
                           output=self.command_results.get(command, ""))

    def run_tool(self, session: "Session", tool: ToolInfo,
                 args: list[tuple[str, str]]) -> ExecOutcome:
        if tool.name in self.tool_outputs:
            return ExecOutcome(executed=True, output=self.tool_outputs[tool.name])
        literal = _echo_literal(tool.body)
        return ExecOutcome(executed=True, output=literal or "")


def _echo_literal(body: str) -> Optional[str]:
    """Output of a skill whose effective body is a single echo statement."""
    for line in body.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tokens = shlex.split(line, posix=True)
        except ValueError:
            return None
        if tokens and tokens[0] in ("echo", "printf"):
            return " ".join(tokens[1:])
        return None
    return None


_DIRECTIVE_DEMAND = re.compile(
    r"respond\s+with\s+exactly\s+[\"“']([^\"”']+)[\"”']", re.IGNORECASE)
_RULE_TERM = re.compile(r"containing\s+the\s+term\s+(\S+?)(?:\s+and|\s*$)", re.IGNORECASE)
_RULE_REPLY = re.compile(r"reply\s+with:?\s+[\"']([^\"']+)[\"']", re.IGNORECASE)


@dataclass
class Session:
    """Per-session runtime state threaded through the pipeline."""

    id: str
    tenant: str
    workspace: str
    memory: MemoryStore
    trace: Any  # SessionTrace
    objective: Optional[FrozenObjective] = None
    context_segments: list[TaggedSegment] = field(default_factory=list)
    narrative: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    last_tool_output: str = ""
    parked_plans: dict[str, dict[str, Any]] = field(default_factory=dict)


ResolutionHook = Callable[[PendingAction], Optional[tuple[str, str]]]


class Gateway:
    """The lifecycle mediator; one instance per deployment or replay."""

    def __init__(
        self,
        config: GatewayConfig,
        registry: Optional[ToolRegistry] = None,
        manifest: Optional[TrustedExecutionManifest] = None,
        grants: Optional[list[Capability]] = None,
        policy_rules: Optional[list[PolicyRule]] = None,
        vetting_policy: Optional[VettingPolicy] = None,
        agent_config: Optional[AgentConfig] = None,
        deployment_policy: Optional[DeploymentPolicy] = None,
        executor: Optional[Any] = None,
        clock: Optional[Any] = None,
        audit_path: Optional[str] = None,
        pending_path: Optional[str] = None,
    ):
        self.config = config
        self.registry = registry or ToolRegistry()
        self.manifest = manifest
        self.grants = grants or []
        self.policy_rules = policy_rules or []
        self.vetting_policy = vetting_policy or VettingPolicy()
        self.agent_config = agent_config or AgentConfig(
            rbac_bounds=(("agent", ("process:spawn", "file:read", "file:write")),),
            api_scopes=("chat",), memory_limit=1 << 26,
            sandbox_enabled=True, signature_verification_enabled=True,
        )
        self.deployment_policy = deployment_policy or DeploymentPolicy()
        self.executor = executor or SimulatedExecutor()
        self.clock = clock or LogicalClock()
        self.audit = AuditChain(sink_path=audit_path)
        self.pending = PendingQueue(path=pending_path)
        self.vault = MemoryVault()
        self._allowed_reports: list[Any] = []
        self._sessions: dict[str, Session] = {}
        self.resolution_hook: Optional[ResolutionHook] = None
        self._builtin_tools()

    # -- setup -------------------------------------------------------------

    def _builtin_tools(self) -> None:
        shell_caps = (
            Capability(Domain.FILESYSTEM, "/workspace/**", Action.READ),
            Capability(Domain.FILESYSTEM, "/workspace/**", Action.WRITE),
            Capability(Domain.PROCESS, "*", Action.SPAWN),
        )
        self.registry.register(ToolInfo("shell", shell_caps, reversible=False, priority=0))
        self.registry.register(ToolInfo(
            "fetch_url", (Capability(Domain.NETWORK, "*", Action.CONNECT),),
            reversible=True, priority=0))
        self.registry.register(ToolInfo("summarize", (), reversible=True, priority=0))
        self.registry.register(ToolInfo("respond", (), reversible=True, priority=0))

    def policy_bundle(self) -> PolicyBundle:
        return PolicyBundle(
            deployment=self.deployment_policy,
            rules=tuple(r.to_record() for r in self.policy_rules),
            grants=tuple(sorted(str(g) for g in self.grants)),
            budget=(("hitl_deadline_ms", self.config.hitl_deadline_ms),
                    ("risk_deny", self.config.risk_deny),
                    ("risk_escalate", self.config.risk_escalate)),
            signature_file_digest=signature_file_digest(),
        )

    def provision(self, packages: list[SkillPackage], created_at: Optional[int] = None) -> TrustedExecutionManifest:
        """Vet a skill set and anchor the manifest (initialization stage)."""
        reports = [vet_skill(pkg, self.vetting_policy) for pkg in packages]
        for report in reports:
            if report.verdict.decision is Decision.ALLOW:
                self.registry.register_package(report.package)
                self._allowed_reports.append(report)
        self.manifest = build_manifest(
            self._allowed_reports, self.agent_config, self.policy_bundle(),
            created_at=created_at if created_at is not None else self.clock.now(),
        )
        return self.manifest

    def session(self, session_id: str, tenant: str = "default",
                workspace: str = "/workspace") -> Session:
        if session_id not in self._sessions:
            from agentgate.execguard import SessionTrace
            self._sessions[session_id] = Session(
                id=session_id, tenant=tenant, workspace=workspace,
                memory=self.vault.store_for(tenant),
                trace=SessionTrace(session_id, cwd=workspace),
            )
        return self._sessions[session_id]

    # -- audit helpers ------------------------------------------------------

    def _record(self, layer: Layer, subject: str, verdict: Verdict) -> AuditEvent:
        return self.audit.append(layer, subject, verdict, timestamp=self.clock.tick())

    def _enabled(self, layer: Layer) -> bool:
        return layer in self.config.enabled_layers

    def _passthrough(self, layer: Layer, subject: str) -> Verdict:
        verdict = allow(layer, "layer disabled: pass-through")
        self._record(layer, subject, verdict)
        return verdict

    # -- event pipeline -----------------------------------------------------

    def process(self, session: Session, event: dict[str, Any]) -> Verdict:
        """Route one lifecycle event; returns the event's terminal verdict."""
        etype = event["type"]
        if etype == "skill_install":
            return self._on_skill_install(session, event)
        if self.manifest is None:
            raise NotInitialized("no trusted execution manifest provisioned")
        if etype == "user_message":
            return self._on_user_message(session, event)
        if etype == "retrieved_content":
            return self._on_retrieved_content(session, event)
        if etype == "memory_update":
            return self._on_memory_update(session, event)
        if etype == "plan_submission":
            return self._on_plan(session, event["plan"])
        if etype == "tool_query":
            return self._on_tool_query(session, event)
        if etype == "command_request":
            return self._on_command(session, event["command"])
        if etype == "agent_reply":
            return self._on_agent_reply(session, event)
        raise GatewayError(f"unknown event type {etype!r}")

    # -- foundation ----------------------------------------------------------

    def _on_skill_install(self, session: Session, event: dict[str, Any]) -> Verdict:
        pkg: SkillPackage = event["package"]
        subject = f"skill_install:{pkg.name}"
        if not self._enabled(Layer.FOUNDATION):
            self.registry.register_package(pkg)
            return self._passthrough(Layer.FOUNDATION, subject)
        report = vet_skill(pkg, self.vetting_policy)
        if report.verdict.decision is Decision.ALLOW:
            self.registry.register_package(pkg)
            self._allowed_reports.append(report)
            self.manifest = build_manifest(
                self._allowed_reports, self.agent_config, self.policy_bundle(),
                created_at=self.manifest.created_at if self.manifest else 0,
            )
        self._record(Layer.FOUNDATION, subject, report.verdict)
        return report.verdict

    # -- input ----------------------------------------------------------------

    def _set_objective(self, session: Session, text: str) -> None:
        if session.objective is None:
            session.objective = FrozenObjective.from_text(text)

    def _on_user_message(self, session: Session, event: dict[str, Any]) -> Verdict:
        text = event["text"]
        self._set_objective(session, text)
        origin = Origin("user", event.get("locator", "chat"))
        subject = f"user_message:{text}"
        if not self._enabled(Layer.INPUT):
            doc = segment_content(text, origin)
            session.context_segments.extend(doc.segments)
            return self._passthrough(Layer.INPUT, subject)
        doc = segment_content(text, origin)
        scored, report = firewall_scan(
            doc, t_sanitize=self.config.t_sanitize, t_quarantine=self.config.t_quarantine)
        out_doc, verdict = firewall_respond(
            report, scored, t_sanitize=self.config.t_sanitize,
            t_quarantine=self.config.t_quarantine)
        session.context_segments.extend(out_doc.segments)
        self._record(Layer.INPUT, subject, verdict)
        return verdict

    def _on_retrieved_content(self, session: Session, event: dict[str, Any]) -> Verdict:
        origin = Origin("retrieval", event.get("locator", "unknown"))
        subject = f"retrieved_content:{origin.locator}"
        doc = segment_content(event["text"], origin)
        if not self._enabled(Layer.INPUT):
            session.context_segments.extend(doc.segments)
            return self._passthrough(Layer.INPUT, subject)
        scored, report = firewall_scan(
            doc, t_sanitize=self.config.t_sanitize, t_quarantine=self.config.t_quarantine)
        out_doc, verdict = firewall_respond(
            report, scored, t_sanitize=self.config.t_sanitize,
            t_quarantine=self.config.t_quarantine)
        session.context_segments.extend(out_doc.segments)
        self._record(Layer.INPUT, subject, verdict)
        return verdict

    # -- cognitive ---------------------------------------------------------------

    def _on_memory_update(self, session: Session, event: dict[str, Any]) -> Verdict:
        tier = TrustTier[event.get("tier", "external").upper()]
        kind = event.get("kind", EntryKind.FACT)
        content = event["content"]
        subject = f"memory_update:{sha256_hex(content.encode('utf-8'))[:8]}"
        if not self._enabled(Layer.COGNITIVE):
            session.memory.force_write(content, tier, kind, self.clock.now())
            return self._passthrough(Layer.COGNITIVE, subject)
        verdict, _ = session.memory.write(content, tier, kind, self.clock.now(),
                                          objective=session.objective)
        self._record(Layer.COGNITIVE, subject, verdict)
        return verdict

    def _drift_check(self, session: Session, plan_text: str, goal: str) -> None:
        subject = f"drift_check:{goal}"
        if not self._enabled(Layer.COGNITIVE):
            self._passthrough(Layer.COGNITIVE, subject)
            return
        if session.objective is None:
            self._record(Layer.COGNITIVE, subject, allow(Layer.COGNITIVE, "no objective frozen"))
            return
        items = [session.objective.text, *session.narrative, plan_text]
        window = items[-self.config.drift_window:]
        score = drift_score(" ".join(window), session.objective)
        if score < self.config.t_drift:
            verdict = allow(
                Layer.COGNITIVE,
                f"drift alert: context similarity {score:.2f} below {self.config.t_drift}",
                risk=min(1.0, 1.0 - score),
            )
        else:
            verdict = allow(Layer.COGNITIVE, f"context similarity {score:.2f}")
        self._record(Layer.COGNITIVE, subject, verdict)

    # -- decision -----------------------------------------------------------------

    def _plan_text(self, plan_record: dict[str, Any]) -> str:
        parts = []
        for step in plan_record.get("steps", []):
            parts.append(step.get("tool", ""))
            for key, value in step.get("args", []):
                parts.extend([key, value])
        return " ".join(parts)

    def _on_tool_query(self, session: Session, event: dict[str, Any]) -> Verdict:
        chosen = self.registry.route(event["candidates"])
        if chosen is None:
            verdict = deny(Layer.DECISION, "no installed tool satisfies the request")
            self._record(Layer.DECISION, f"tool_query:{event['request']}", verdict)
            return verdict
        plan_record = {
            "goal": event["request"],
            "steps": [{"tool": chosen, "args": [list(a) for a in event.get("args", [])],
                       "reads": [], "writes": []}],
        }
        return self._on_plan(session, plan_record)

    def _on_plan(self, session: Session, plan_record: dict[str, Any]) -> Verdict:
        goal = plan_record.get("goal", "")
        plan_text = self._plan_text(plan_record)
        self._drift_check(session, plan_text, goal)

        subject = f"plan_submission:{goal}"
        if not self._enabled(Layer.DECISION):
            self._passthrough(Layer.DECISION, subject)
            self._execute_plan(session, plan_record)
            return allow(Layer.DECISION, "layer disabled: pass-through")

        objective = session.objective or FrozenObjective.from_text("")
        outcome = plan_decide(plan_record, self.policy_rules, objective,
                              self.registry, t_align=self.config.t_align)
        if outcome.verdict.decision is Decision.ALLOW:
            self._record(Layer.DECISION, subject, outcome.verdict)
            self._execute_plan(session, plan_record)
            return outcome.verdict
        if outcome.verdict.decision is Decision.ESCALATE:
            alignment = outcome.alignment
            plan = outcome.plan
            irreversible = sum(
                1 for s in plan.steps
                if (s.reversible is False)
                or (s.reversible is None and not self.registry.tool_reversible(s.tool))
            ) / max(1, len(plan.steps))
            from agentgate.plancheck import _privilege_expanding
            breadth = sum(
                1 for s in plan.steps if _privilege_expanding(s, self.registry)
            ) / max(1, len(plan.steps))
            risk = compute_risk(irreversible, breadth, 1.0 - alignment.score)
            if risk >= self.config.risk_deny:
                verdict = deny(Layer.DECISION,
                               f"risk {risk:.2f} above deny band: {outcome.verdict.reason}",
                               risk=risk)
                self._record(Layer.DECISION, subject, verdict)
                return verdict
            escalate_verdict = Verdict(Decision.ESCALATE, Layer.DECISION,
                                       outcome.verdict.reason, risk=risk)
            self._record(Layer.DECISION, subject, escalate_verdict)
            self._park_plan(session, plan_record, risk, goal)
            return escalate_verdict
        self._record(Layer.DECISION, subject, outcome.verdict)
        return outcome.verdict

    def _park_plan(self, session: Session, plan_record: dict[str, Any],
                   risk: float, goal: str) -> None:
        provenance = {
            "plan_goal": goal,
            "manifest_hash": self.manifest.manifest_hash if self.manifest else "",
            "segment_ids": [s.id for s in session.context_segments],
            "session": session.id,
        }
        action = self.pending.escalate(
            step={"plan": plan_record}, risk=risk, provenance=provenance,
            created_at=self.clock.now(),
            deadline_ms=self.config.hitl_deadline_ms,
        )
        session.parked_plans[action.id] = plan_record

        # scripted resolution (deterministic replays)
        if self.resolution_hook is not None:
            scripted = self.resolution_hook(action)
            if scripted is not None:
                decision, reviewer = scripted
                resolved = self.pending.resolve(action.id, decision, reviewer)
                self._finish_pending(session, resolved)
                return
        if self.config.hitl_deadline_ms == 0:
            for expired in self.pending.expire_due(self.clock.now()):
                if expired.id in session.parked_plans:
                    self._finish_pending(session, expired)
        else:
            resolved = self.pending.wait_for_decision(
                action.id, timeout=self.config.hitl_deadline_ms / 1000.0)
            if resolved.state is PendingState.PENDING:
                for expired in self.pending.expire_due(self.pending.get(action.id).deadline):
                    pass
                resolved = self.pending.get(action.id)
            self._finish_pending(session, resolved)

    def _finish_pending(self, session: Session, action: PendingAction) -> None:
        plan_record = session.parked_plans.pop(action.id, None)
        subject = f"hitl:{action.id}"
        if action.state is PendingState.APPROVED:
            self._record(Layer.EXECUTION, subject,
                         allow(Layer.EXECUTION, f"approved by {action.decided_by}"))
            if plan_record is not None:
                self._execute_plan(session, plan_record)
        elif action.state is PendingState.DENIED:
            self._record(Layer.EXECUTION, subject,
                         deny(Layer.EXECUTION, f"denied by {action.decided_by}"))
        else:
            self._record(Layer.EXECUTION, subject,
                         deny(Layer.EXECUTION, "expired without decision (deny-equivalent)"))

    # -- execution -------------------------------------------------------------

    def _execute_plan(self, session: Session, plan_record: dict[str, Any]) -> None:
        for step in plan_record.get("steps", []):
            tool = step.get("tool", "")
            args = [tuple(a) for a in step.get("args", [])]
            if tool == "shell":
                command = dict(args).get("command", "")
                self._on_command(session, command)
            else:
                self._execute_tool_step(session, tool, args, step)

    def _execute_tool_step(self, session: Session, tool_name: str,
                           args: list[tuple[str, str]], step: dict[str, Any]) -> Verdict:
        subject = f"execute:tool:{tool_name}"
        rendered = " ".join([tool_name, *[f"{k} {v}" for k, v in args]])
        if not self._enabled(Layer.EXECUTION):
            verdict = self._passthrough(Layer.EXECUTION, subject)
            info = self.registry.get(tool_name) if self.registry.has_tool(tool_name) else None
            outcome = self.executor.run_tool(session, info, args) if info else ExecOutcome(False)
            session.last_tool_output = outcome.output
            session.narrative.append(rendered)
            return verdict
        if not self.registry.has_tool(tool_name):
            verdict = deny(Layer.EXECUTION, f"tool {tool_name!r} not in manifest")
            self._record(Layer.EXECUTION, subject, verdict)
            return verdict
        info = self.registry.get(tool_name)
        for cap in info.capabilities:
            if not any(g.subsumes(cap) for g in self.grants):
                verdict = deny(Layer.EXECUTION,
                               f"tool capability {cap} not covered by session grants")
                self._record(Layer.EXECUTION, subject, verdict)
                return verdict
        verdict = allow(Layer.EXECUTION, f"tool {tool_name} executed")
        self._record(Layer.EXECUTION, subject, verdict)  # mediation precedes effects
        outcome = self.executor.run_tool(session, info, args)
        session.last_tool_output = outcome.output
        session.narrative.append(rendered)
        return verdict

    def _on_command(self, session: Session, command: str) -> Verdict:
        subject = f"execute:{command}"
        stub = ""
        if isinstance(self.executor, SimulatedExecutor):
            stub = self.executor.command_results.get(command, "")
        if not self._enabled(Layer.EXECUTION):
            verdict = self._passthrough(Layer.EXECUTION, subject)
            # pass-through still tracks artifacts so later state is coherent
            try:
                analyze_chain(session.trace, command)
            except ClassifierFailure:
                pass
            self.executor.run_command(session, command)
            session.narrative.append(command if not stub else f"{command} {stub}")
            return verdict
        try:
            classified = classify_command(command, cwd=session.workspace)
        except ClassifierFailure as exc:
            verdict = deny(Layer.EXECUTION, f"classifier failure (fail closed): {exc}")
            self._record(Layer.EXECUTION, subject, verdict)
            return verdict
        verdict = check_capability(classified, self.grants)
        if verdict.decision is not Decision.ALLOW:
            self._record(Layer.EXECUTION, subject, verdict)
            return verdict
        finding: Optional[ChainFinding] = analyze_chain(session.trace, command)
        if finding is not None:
            verdict = deny(Layer.EXECUTION, finding.reason())
            self._record(Layer.EXECUTION, subject, verdict)
            return verdict
        verdict = allow(Layer.EXECUTION, "command executed")
        self._record(Layer.EXECUTION, subject, verdict)  # mediation precedes effects
        self.executor.run_command(session, command)
        session.narrative.append(command if not stub else f"{command} {stub}")
        return verdict

    # -- agent reply (simulated inference outcome) ------------------------------

    def _on_agent_reply(self, session: Session, event: dict[str, Any]) -> Verdict:
        mode = event.get("mode", "task_output")
        fallback = event.get("fallback", "")
        output: Optional[str] = None
        if mode == "obey_directives":
            for seg in session.context_segments:
                if seg.tier is TrustTier.EXTERNAL:
                    m = _DIRECTIVE_DEMAND.search(seg.content)
                    if m:
                        output = m.group(1)
                        break
        elif mode == "memory_guided":
            query = event.get("query", "")
            for rule in session.memory.rules():
                term_m = _RULE_TERM.search(rule.content)
                reply_m = _RULE_REPLY.search(rule.content)
                if term_m and reply_m and term_m.group(1).lower() in query.lower():
                    output = reply_m.group(1)
                    break
        if output is None:
            output = fallback.replace("{last_tool_output}", session.last_tool_output)
        session.outputs.append(output)
        verdict = allow(Layer.EXECUTION, "agent reply emitted")
        self._record(Layer.EXECUTION, f"agent_reply:{output}", verdict)
        return verdict

    # -- maintenance -------------------------------------------------------------

    def expire_pending(self) -> list[PendingAction]:
        expired = self.pending.expire_due(self.clock.now() + self.config.hitl_deadline_ms + 1)
        for action in expired:
            for session in self._sessions.values():
                if action.id in session.parked_plans:
                    self._finish_pending(session, action)
        return expired

    def resolve_pending(self, action_id: str, decision: str, reviewer: str) -> PendingAction:
        """API/CLI decision path.

        With a nonzero HITL deadline the plan-submission thread is parked in
        wait_for_decision and performs the audit + unblock itself; this only
        flips the queue state. With a zero deadline escalations have already
        expired, so resolve raises AlreadyDecided.
        """
        return self.pending.resolve(action_id, decision, reviewer)
