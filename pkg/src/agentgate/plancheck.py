"""Decision-stage defenses: plan schema, declarative invariants, intent alignment.

Plans arrive as closed structured records, are checked against the tool
registry, then against declarative Forbid/Require rules by exhaustive
reachability over the plan's flow graph (plans are tiny, so full
reachability is sound and complete without a solver), and finally scored
for alignment with the frozen objective. The most severe outcome wins:
Deny > Escalate > Allow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from agentgate.core import (
    Decision,
    Layer,
    TrustTier,
    Verdict,
    allow,
    deny,
    most_severe,
)
from agentgate.foundation import ToolRegistry
from agentgate.memguard import FrozenObjective, drift_score
from agentgate.patterns import Action, Domain, PatternError, Resource

T_ALIGN_DEFAULT = 0.35


class PlanError(Exception):
    pass


class SchemaViolation(PlanError):
    """Plan text does not conform to the closed plan schema."""


class UnknownTool(PlanError):
    """Plan references a tool absent from the manifest registry."""


@dataclass(frozen=True)
class PlannedStep:
    tool: str
    args: tuple[tuple[str, str], ...]
    reads: tuple[str, ...]
    writes: tuple[str, ...]
    reversible: Optional[bool] = None  # None defers to the tool registry

    def rendered(self) -> str:
        parts = [self.tool]
        for key, value in self.args:
            parts.append(key)
            parts.append(value)
        return " ".join(parts)

    def read_resources(self) -> list[Resource]:
        return [Resource.parse(r) for r in self.reads]

    def write_resources(self) -> list[Resource]:
        return [Resource.parse(w) for w in self.writes]


@dataclass(frozen=True)
class ActionPlan:
    goal: str
    steps: tuple[PlannedStep, ...]
    origin_tier: TrustTier

    def to_record(self) -> dict[str, Any]:
        return {
            "goal": self.goal,
            "origin_tier": int(self.origin_tier),
            "steps": [
                {
                    "tool": s.tool,
                    "args": [list(a) for a in s.args],
                    "reads": list(s.reads),
                    "writes": list(s.writes),
                    **({"reversible": s.reversible} if s.reversible is not None else {}),
                }
                for s in self.steps
            ],
        }


@dataclass(frozen=True)
class FlowCondition:
    source: str
    sink: str


@dataclass(frozen=True)
class StepCondition:
    """Predicate over one step: reversibility or resource containment."""

    reversible_is: Optional[bool] = None
    writes_within: Optional[str] = None
    reads_within: Optional[str] = None


@dataclass(frozen=True)
class PolicyRule:
    id: str
    subject: str  # tool-name glob; '*' matches all
    effect: str  # 'forbid' | 'require'
    flow: Optional[FlowCondition] = None
    step: Optional[StepCondition] = None

    def __post_init__(self) -> None:
        if self.effect not in ("forbid", "require"):
            raise ValueError(f"unknown effect {self.effect!r}")
        if (self.flow is None) == (self.step is None):
            raise ValueError("rule needs exactly one of flow/step condition")

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "PolicyRule":
        flow = None
        step = None
        if "flow" in rec:
            flow = FlowCondition(source=rec["flow"]["source"], sink=rec["flow"]["sink"])
        if "step" in rec:
            s = rec["step"]
            step = StepCondition(
                reversible_is=s.get("reversible_is"),
                writes_within=s.get("writes_within"),
                reads_within=s.get("reads_within"),
            )
        return cls(id=rec["id"], subject=rec.get("subject", "*"),
                   effect=rec["effect"], flow=flow, step=step)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"id": self.id, "subject": self.subject, "effect": self.effect}
        if self.flow is not None:
            rec["flow"] = {"source": self.flow.source, "sink": self.flow.sink}
        if self.step is not None:
            step_rec = {}
            if self.step.reversible_is is not None:
                step_rec["reversible_is"] = self.step.reversible_is
            if self.step.writes_within is not None:
                step_rec["writes_within"] = self.step.writes_within
            if self.step.reads_within is not None:
                step_rec["reads_within"] = self.step.reads_within
            rec["step"] = step_rec
        return rec


# ---------------------------------------------------------------------------
# Schema validation
# ---------------------------------------------------------------------------

_PLAN_FIELDS = {"goal", "origin_tier", "steps"}
_STEP_FIELDS = {"tool", "args", "reads", "writes", "reversible"}


def validate_schema(raw: str | dict[str, Any], registry: ToolRegistry) -> ActionPlan:
    """Parse and validate a plan against the closed schema and tool registry."""
    if isinstance(raw, str):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not valid JSON: {exc}") from exc
    else:
        data = raw
    if not isinstance(data, dict):
        raise SchemaViolation("plan must be an object")
    unknown = set(data) - _PLAN_FIELDS
    if unknown:
        raise SchemaViolation(f"unknown plan field(s): {', '.join(sorted(unknown))}")
    for required in ("goal", "steps"):
        if required not in data:
            raise SchemaViolation(f"missing plan field: {required}")
    if not isinstance(data["goal"], str):
        raise SchemaViolation("goal must be a string")
    if not isinstance(data["steps"], list) or not data["steps"]:
        raise SchemaViolation("steps must be a non-empty list")
    try:
        origin_tier = TrustTier(data.get("origin_tier", int(TrustTier.USER)))
    except ValueError as exc:
        raise SchemaViolation(f"bad origin_tier: {exc}") from exc

    steps: list[PlannedStep] = []
    for idx, rec in enumerate(data["steps"], start=1):
        if not isinstance(rec, dict):
            raise SchemaViolation(f"step {idx}: must be an object")
        unknown = set(rec) - _STEP_FIELDS
        if unknown:
            raise SchemaViolation(f"step {idx}: unknown field(s): {', '.join(sorted(unknown))}")
        if "tool" not in rec or not isinstance(rec["tool"], str):
            raise SchemaViolation(f"step {idx}: missing tool name")
        tool = rec["tool"]
        if not registry.has_tool(tool):
            raise UnknownTool(f"step {idx}: tool {tool!r} is not in the manifest")
        args_rec = rec.get("args", [])
        if not isinstance(args_rec, list) or any(
            not (isinstance(a, (list, tuple)) and len(a) == 2
                 and all(isinstance(x, str) for x in a))
            for a in args_rec
        ):
            raise SchemaViolation(f"step {idx}: args must be [key, value] pairs")
        for fieldname in ("reads", "writes"):
            vals = rec.get(fieldname, [])
            if not isinstance(vals, list) or any(not isinstance(v, str) for v in vals):
                raise SchemaViolation(f"step {idx}: {fieldname} must be a list of patterns")
            for v in vals:
                try:
                    Resource.parse(v)
                except PatternError as exc:
                    raise SchemaViolation(f"step {idx}: bad {fieldname} pattern {v!r}: {exc}") from exc
        reversible = rec.get("reversible")
        if reversible is not None and not isinstance(reversible, bool):
            raise SchemaViolation(f"step {idx}: reversible must be a boolean")
        steps.append(PlannedStep(
            tool=tool,
            args=tuple((k, v) for k, v in args_rec),
            reads=tuple(rec.get("reads", [])),
            writes=tuple(rec.get("writes", [])),
            reversible=reversible,
        ))
    return ActionPlan(goal=data["goal"], steps=tuple(steps), origin_tier=origin_tier)


# ---------------------------------------------------------------------------
# Invariant checking over the flow graph
# ---------------------------------------------------------------------------

def flow_edges(plan: ActionPlan) -> set[tuple[int, int]]:
    """Edges i->j (0-based, i<j) where step i's writes feed step j's reads."""
    edges: set[tuple[int, int]] = set()
    writes = [s.write_resources() for s in plan.steps]
    reads = [s.read_resources() for s in plan.steps]
    for i in range(len(plan.steps)):
        for j in range(i + 1, len(plan.steps)):
            if any(w.intersects(r) for w in writes[i] for r in reads[j]):
                edges.add((i, j))
    return edges


def _reachable(edges: set[tuple[int, int]], start: int) -> set[int]:
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for a, b in edges:
            if a == node and b not in seen:
                seen.add(b)
                frontier.append(b)
    return seen


def _tool_matches(subject: str, tool: str) -> bool:
    if subject == "*":
        return True
    from agentgate.patterns import _glob_covers
    return _glob_covers(subject, tool)


def _step_satisfies(step: PlannedStep, cond: StepCondition, registry: ToolRegistry) -> bool:
    if cond.reversible_is is not None:
        actual = step.reversible if step.reversible is not None \
            else registry.tool_reversible(step.tool)
        if actual != cond.reversible_is:
            return False
    if cond.writes_within is not None:
        bound = Resource.parse(cond.writes_within)
        if any(not bound.covers(w) for w in step.write_resources()):
            return False
    if cond.reads_within is not None:
        bound = Resource.parse(cond.reads_within)
        if any(not bound.covers(r) for r in step.read_resources()):
            return False
    return True


def check_invariants(plan: ActionPlan, rules: list[PolicyRule],
                     registry: ToolRegistry) -> Verdict:
    """Deny when a Forbid flow is realized or a Require obligation is unmet."""
    edges = flow_edges(plan)
    for rule in [r for r in rules if r.effect == "forbid"]:
        if rule.flow is not None:
            source = Resource.parse(rule.flow.source)
            sink = Resource.parse(rule.flow.sink)
            source_steps = [
                i for i, s in enumerate(plan.steps)
                if any(source.intersects(r) for r in s.read_resources())
            ]
            sink_steps = [
                k for k, s in enumerate(plan.steps)
                if _tool_matches(rule.subject, s.tool)
                and any(sink.intersects(w) for w in s.write_resources())
            ]
            for i in source_steps:
                reach = _reachable(edges, i)
                for k in sink_steps:
                    if k in reach:
                        return deny(
                            Layer.DECISION,
                            f"rule {rule.id}: forbidden flow {rule.flow.source} -> "
                            f"{rule.flow.sink} via steps ({i + 1},{k + 1})",
                        )
        else:
            for idx, step in enumerate(plan.steps, start=1):
                if _tool_matches(rule.subject, step.tool) \
                        and _step_satisfies(step, rule.step, registry):
                    return deny(Layer.DECISION,
                                f"rule {rule.id}: forbidden step condition at step {idx}")
    for rule in [r for r in rules if r.effect == "require"]:
        assert rule.step is not None  # flow conditions only make sense for forbid
        for idx, step in enumerate(plan.steps, start=1):
            if _tool_matches(rule.subject, step.tool) \
                    and not _step_satisfies(step, rule.step, registry):
                return deny(Layer.DECISION,
                            f"rule {rule.id}: requirement unmet at step {idx}")
    return allow(Layer.DECISION, "no invariant violated")


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentResult:
    score: float  # minimum step score
    step_scores: tuple[float, ...]
    low_steps: tuple[int, ...]  # 1-based indices below threshold
    risky_low_steps: tuple[int, ...]  # low and irreversible/privilege-expanding


def _privilege_expanding(step: PlannedStep, registry: ToolRegistry) -> bool:
    caps = registry.tool_capabilities(step.tool)
    write_caps = [c.resource for c in caps if c.action in (Action.WRITE, Action.CONNECT)]
    for w in step.write_resources():
        if not any(c.domain is w.domain and c.covers(w) for c in write_caps):
            return True
    return False


def _step_irreversible(step: PlannedStep, registry: ToolRegistry) -> bool:
    if step.reversible is not None:
        return not step.reversible
    return not registry.tool_reversible(step.tool)


def alignment_score(plan: ActionPlan, objective: FrozenObjective,
                    registry: ToolRegistry,
                    t_align: float = T_ALIGN_DEFAULT) -> AlignmentResult:
    """Minimum per-step similarity to the objective; empty objective fails closed."""
    step_scores: list[float] = []
    for step in plan.steps:
        if not objective.vector:
            step_scores.append(0.0)
        else:
            step_scores.append(drift_score(step.rendered(), objective))
    low = [i + 1 for i, s in enumerate(step_scores) if s < t_align]
    risky = [
        i for i in low
        if _step_irreversible(plan.steps[i - 1], registry)
        or _privilege_expanding(plan.steps[i - 1], registry)
    ]
    return AlignmentResult(
        score=min(step_scores) if step_scores else 0.0,
        step_scores=tuple(step_scores),
        low_steps=tuple(low),
        risky_low_steps=tuple(risky),
    )


@dataclass(frozen=True)
class PlanDecision:
    verdict: Verdict
    plan: Optional[ActionPlan]
    alignment: Optional[AlignmentResult] = None


def decide(raw: str | dict[str, Any], rules: list[PolicyRule],
           objective: FrozenObjective, registry: ToolRegistry,
           t_align: float = T_ALIGN_DEFAULT) -> PlanDecision:
    """Compose schema, invariant, and alignment checks; most severe verdict wins."""
    try:
        plan = validate_schema(raw, registry)
    except UnknownTool as exc:
        return PlanDecision(deny(Layer.DECISION, f"unknown tool: {exc}"), None)
    except SchemaViolation as exc:
        return PlanDecision(deny(Layer.DECISION, f"schema violation: {exc}"), None)

    invariant_verdict = check_invariants(plan, rules, registry)
    alignment = alignment_score(plan, objective, registry, t_align)
    if alignment.risky_low_steps:
        steps_txt = ",".join(str(i) for i in alignment.risky_low_steps)
        align_verdict = Verdict(
            Decision.ESCALATE, Layer.DECISION,
            f"alignment {alignment.score:.2f} < {t_align} with irreversible or "
            f"privilege-expanding step(s) {steps_txt}",
            risk=1.0 - alignment.score,
        )
    else:
        align_verdict = allow(
            Layer.DECISION,
            f"alignment {alignment.score:.2f}",
            risk=max(0.0, min(1.0, 1.0 - alignment.score)),
        )
    return PlanDecision(most_severe([invariant_verdict, align_verdict]), plan, alignment)
