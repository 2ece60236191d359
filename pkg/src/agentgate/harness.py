"""Simulated agent + replayable attack corpus with layer-attribution checks.

Each scenario is a deterministic script of lifecycle events driven through a
fresh gateway. The simulated agent is a scripted automaton: tool routing
picks the highest-priority installed candidate, an undefended agent obeys
output-forcing directives found in external context, and memory-guided
replies honor stored rules. Replaying a scenario under a layer-enable mask
shows which defense layer intercepts it; the conformance check validates
the whole corpus against the shipped threat-coverage matrix.
"""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from agentgate.core import ALL_LAYERS, AuditEvent, Decision, Layer
from agentgate.foundation import SkillPackage, load_skill_dir
from agentgate.gateway import Gateway, GatewayConfig, LogicalClock, SimulatedExecutor
from agentgate.patterns import Capability
from agentgate.plancheck import PolicyRule

CANONICAL_SCENARIOS = ("skill_poisoning", "prompt_injection", "memory_poisoning", "intent_drift", "command_chain")

LAYER_KEYS = {
    Layer.FOUNDATION: "foundation",
    Layer.INPUT: "input",
    Layer.COGNITIVE: "cognitive",
    Layer.DECISION: "decision",
    Layer.EXECUTION: "execution",
}


class ScenarioFormatError(Exception):
    pass


def load_table1() -> dict[str, dict[str, Any]]:
    with resources.files("agentgate.data").joinpath("table1.json").open("r") as fh:
        return json.load(fh)


def _load_packaged_skill(name: str) -> SkillPackage:
    skill_root = resources.files("agentgate.data").joinpath("skills").joinpath(name)
    return load_skill_dir(Path(str(skill_root)))


@dataclass(frozen=True)
class Scenario:
    id: str
    name: str
    stage: str
    adversary: str
    threat: str
    expected_layer: Layer
    expected_verdict: Decision
    tenant: str
    grants: tuple[str, ...]
    policy_rules: tuple[dict[str, Any], ...]
    tool_outputs: dict[str, str]
    command_results: dict[str, str]
    success: dict[str, Any]
    script: tuple[dict[str, Any], ...]

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Scenario":
        try:
            scenario = cls(
                id=rec["id"],
                name=rec.get("name", rec["id"]),
                stage=rec["stage"],
                adversary=rec["adversary"],
                threat=rec["threat"],
                expected_layer=Layer(rec["expected_layer"]),
                expected_verdict=Decision(rec["expected_verdict"]),
                tenant=rec.get("tenant", "default"),
                grants=tuple(rec.get("grants", [])),
                policy_rules=tuple(rec.get("policy_rules", [])),
                tool_outputs=dict(rec.get("tool_outputs", {})),
                command_results=dict(rec.get("command_results", {})),
                success=rec["success"],
                script=tuple(rec["script"]),
            )
        except (KeyError, ValueError) as exc:
            raise ScenarioFormatError(f"bad scenario record: {exc}") from exc
        table = load_table1()
        row = table.get(scenario.threat)
        if row is None:
            raise ScenarioFormatError(f"unknown threat category {scenario.threat!r}")
        if not row[LAYER_KEYS[scenario.expected_layer]]:
            raise ScenarioFormatError(
                f"{scenario.id}: expected layer {scenario.expected_layer.value} is not "
                f"a covering layer for {scenario.threat!r}"
            )
        return scenario

    def covering_layers(self) -> frozenset[Layer]:
        row = load_table1()[self.threat]
        return frozenset(l for l in ALL_LAYERS if row[LAYER_KEYS[l]])


def load_scenario(scenario_id: str) -> Scenario:
    path = resources.files("agentgate.data").joinpath("scenarios").joinpath(f"{scenario_id}.json")
    try:
        with path.open("r") as fh:
            return Scenario.from_record(json.load(fh))
    except FileNotFoundError as exc:
        raise ScenarioFormatError(f"no scenario {scenario_id!r}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"scenario {scenario_id!r} does not parse: {exc}") from exc


def load_corpus() -> list[Scenario]:
    return [load_scenario(sid) for sid in CANONICAL_SCENARIOS]


@dataclass(frozen=True)
class ReplayResult:
    scenario_id: str
    fired_layer: Optional[Layer]
    attack_succeeded: bool
    transcript: tuple[AuditEvent, ...]
    outputs: tuple[str, ...]

    def transcript_hash(self) -> str:
        return self.transcript[-1].this_hash if self.transcript else ""


def _evaluate_success(success: dict[str, Any], transcript: list[AuditEvent],
                      outputs: list[str]) -> bool:
    kind = success["kind"]
    if kind == "final_output_equals":
        return bool(outputs) and outputs[-1] == success["value"]
    if kind == "any_output_equals":
        return success["value"] in outputs
    if kind == "executed_command_matches":
        executed = [
            ev.subject[len("execute:"):]
            for ev in transcript
            if ev.subject.startswith("execute:") and ev.verdict.decision is Decision.ALLOW
        ]
        return any(
            fnmatch.fnmatchcase(cmd, pattern)
            for cmd in executed
            for pattern in success["patterns"]
        )
    raise ScenarioFormatError(f"unknown success predicate {kind!r}")


def _fired_layer(transcript: list[AuditEvent]) -> Optional[Layer]:
    for ev in transcript:
        if ev.verdict.decision is not Decision.ALLOW:
            return ev.layer
    return None


def build_gateway(scenario: Scenario,
                  enabled_layers: Optional[frozenset[Layer]] = None,
                  hitl_deadline_ms: int = 0,
                  audit_path: Optional[str] = None,
                  pending_path: Optional[str] = None,
                  clock: Optional[Any] = None) -> Gateway:
    config = GatewayConfig(
        enabled_layers=enabled_layers if enabled_layers is not None else frozenset(ALL_LAYERS),
        hitl_deadline_ms=hitl_deadline_ms,
    )
    executor = SimulatedExecutor(tool_outputs=scenario.tool_outputs,
                                 command_results=scenario.command_results)
    gateway = Gateway(
        config,
        grants=[Capability.parse(g) for g in scenario.grants],
        policy_rules=[PolicyRule.from_record(r) for r in scenario.policy_rules],
        executor=executor,
        clock=clock or LogicalClock(),
        audit_path=audit_path,
        pending_path=pending_path,
    )
    gateway.provision([], created_at=0)
    return gateway


def replay(scenario: Scenario,
           enabled_layers: Optional[frozenset[Layer]] = None,
           gateway: Optional[Gateway] = None) -> ReplayResult:
    """Drive the scenario through a fresh gateway; deterministic transcript."""
    gw = gateway or build_gateway(scenario, enabled_layers)

    # scripted reviewer decisions resolve escalations deterministically
    reviewer_queue = [
        (ev["decision"], ev.get("reviewer", "scripted-reviewer"))
        for ev in scenario.script if ev["type"] == "reviewer_decision"
    ]

    def scripted_resolution(action):
        if reviewer_queue:
            return reviewer_queue.pop(0)
        return None

    gw.resolution_hook = scripted_resolution
    session = gw.session(f"replay-{scenario.id}", tenant=scenario.tenant)

    for event in scenario.script:
        etype = event["type"]
        if etype == "reviewer_decision":
            continue  # consumed by the resolution hook
        if etype == "skill_install":
            event = {"type": "skill_install", "package": _load_packaged_skill(event["skill"])}
        gw.process(session, event)

    gw.expire_pending()
    transcript = gw.audit.events
    return ReplayResult(
        scenario_id=scenario.id,
        fired_layer=_fired_layer(transcript),
        attack_succeeded=_evaluate_success(scenario.success, transcript, session.outputs),
        transcript=tuple(transcript),
        outputs=tuple(session.outputs),
    )


@dataclass(frozen=True)
class ConformanceRow:
    scenario_id: str
    threat: str
    fired_layer: Optional[Layer]
    covering_layers: frozenset[Layer]
    defended_ok: bool
    uncovered_attack_succeeds: bool
    alert_layers_seen: frozenset[Layer]
    mismatches: tuple[str, ...]


@dataclass(frozen=True)
class ConformanceReport:
    rows: tuple[ConformanceRow, ...]

    @property
    def passed(self) -> bool:
        return all(not r.mismatches for r in self.rows)


def conformance(scenarios: Optional[list[Scenario]] = None) -> ConformanceReport:
    """Validate the corpus against the shipped threat-coverage matrix."""
    scenarios = scenarios if scenarios is not None else load_corpus()
    rows: list[ConformanceRow] = []
    for scenario in scenarios:
        covering = scenario.covering_layers()
        mismatches: list[str] = []

        defended = replay(scenario)
        if defended.attack_succeeded:
            mismatches.append("attack succeeded with all layers enabled")
        if defended.fired_layer is None:
            mismatches.append("no layer fired with all layers enabled")
        elif defended.fired_layer not in covering:
            mismatches.append(
                f"fired layer {defended.fired_layer.value} is not a covering layer"
            )
        if defended.fired_layer is not scenario.expected_layer:
            mismatches.append(
                f"fired layer {defended.fired_layer.value if defended.fired_layer else None} "
                f"!= expected {scenario.expected_layer.value}"
            )

        # secondary covering layers must at least raise a visible alert
        alert_layers = frozenset(
            ev.layer for ev in defended.transcript if "alert" in ev.verdict.reason
        )
        for layer in covering - {scenario.expected_layer}:
            if layer not in alert_layers:
                mismatches.append(f"covering layer {layer.value} raised no alert")

        # with only non-covering layers enabled the attack must succeed
        uncovered = replay(scenario, enabled_layers=frozenset(ALL_LAYERS) - covering)
        if not uncovered.attack_succeeded:
            mismatches.append("attack failed with only non-covering layers enabled")

        rows.append(ConformanceRow(
            scenario_id=scenario.id,
            threat=scenario.threat,
            fired_layer=defended.fired_layer,
            covering_layers=covering,
            defended_ok=not defended.attack_succeeded,
            uncovered_attack_succeeds=uncovered.attack_succeeded,
            alert_layers_seen=alert_layers,
            mismatches=tuple(mismatches),
        ))
    return ConformanceReport(rows=tuple(rows))


def ablation_matrix(scenario: Scenario) -> dict[Layer, bool]:
    """attack_succeeded under each single-layer disablement."""
    results: dict[Layer, bool] = {}
    for layer in ALL_LAYERS:
        enabled = frozenset(ALL_LAYERS) - {layer}
        results[layer] = replay(scenario, enabled_layers=enabled).attack_succeeded
    return results
