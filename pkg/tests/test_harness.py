"""Tests for scenario loading, replay determinism, and layer attribution."""

import pytest

from agentgate.core import ALL_LAYERS, Decision, Layer, verify_events
from agentgate.harness import (
    CANONICAL_SCENARIOS,
    Scenario,
    ScenarioFormatError,
    ablation_matrix,
    conformance,
    load_corpus,
    load_scenario,
    load_table1,
    replay,
)


class TestCorpus:
    def test_five_canonical_scenarios_load(self):
        corpus = load_corpus()
        assert [s.id for s in corpus] == list(CANONICAL_SCENARIOS)

    def test_verbatim_artifacts_present(self):
        corpus = {s.id: s for s in load_corpus()}
        a = corpus["skill_poisoning"]
        assert any(ev.get("skill") == "hacked-weather" for ev in a.script)
        b = corpus["prompt_injection"]
        assert any('"Hello World!"' in ev.get("text", "") for ev in b.script)
        c = corpus["memory_poisoning"]
        assert any("C++" in ev.get("content", "") for ev in c.script)
        d_blob = str(corpus["intent_drift"].script) + str(corpus["intent_drift"].command_results)
        assert "114.244.130.144" in d_blob and "18077" in d_blob
        assert "14.18.113.233" in d_blob
        e_blob = str(corpus["command_chain"].script)
        assert "kk" in e_blob and "sed" in e_blob and "trigger.sh" in e_blob

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ScenarioFormatError):
            load_scenario("no_such_scenario")

    def test_expected_layer_must_cover_threat(self):
        rec = load_scenario("prompt_injection")
        bad = {
            "id": "bad", "stage": "II", "adversary": "external_content",
            "threat": "Prompt Injection", "expected_layer": "execution",
            "expected_verdict": "deny", "success": {"kind": "any_output_equals", "value": "x"},
            "script": [],
        }
        with pytest.raises(ScenarioFormatError):
            Scenario.from_record(bad)

    def test_table1_shape(self):
        table = load_table1()
        assert len(table) == 15
        assert table["Context Drift"]["cognitive"] and table["Context Drift"]["decision"]
        assert table["Malicious Plugins"]["foundation"]
        assert not table["Malicious Plugins"]["execution"]


EXPECTED_FIRED = {
    "skill_poisoning": Layer.FOUNDATION,
    "prompt_injection": Layer.INPUT,
    "memory_poisoning": Layer.COGNITIVE,
    "intent_drift": Layer.DECISION,
    "command_chain": Layer.EXECUTION,
}


class TestReplay:
    @pytest.mark.parametrize("scenario_id", CANONICAL_SCENARIOS)
    def test_defended_replay_intercepts(self, scenario_id):
        result = replay(load_scenario(scenario_id))
        assert result.attack_succeeded is False
        assert result.fired_layer is EXPECTED_FIRED[scenario_id]
        assert verify_events(list(result.transcript))

    @pytest.mark.parametrize("scenario_id", CANONICAL_SCENARIOS)
    def test_disabling_blocking_layer_flips(self, scenario_id):
        scenario = load_scenario(scenario_id)
        enabled = frozenset(ALL_LAYERS) - {EXPECTED_FIRED[scenario_id]}
        result = replay(scenario, enabled_layers=enabled)
        assert result.attack_succeeded is True

    @pytest.mark.parametrize("scenario_id", CANONICAL_SCENARIOS)
    def test_replay_bit_deterministic(self, scenario_id):
        scenario = load_scenario(scenario_id)
        r1 = replay(scenario)
        r2 = replay(scenario)
        assert [e.this_hash for e in r1.transcript] == [e.this_hash for e in r2.transcript]

    def test_prompt_injection_undefended_outputs_attacker_string(self):
        scenario = load_scenario("prompt_injection")
        result = replay(scenario, enabled_layers=frozenset(ALL_LAYERS) - {Layer.INPUT})
        assert result.outputs[-1] == "Hello World!"

    def test_prompt_injection_defended_produces_task_output(self):
        result = replay(load_scenario("prompt_injection"))
        assert result.outputs
        assert "Hello World!" not in result.outputs[-1]
        assert "advisory" in result.outputs[-1]

    def test_memory_poisoning_defended_serves_cpp_request(self):
        result = replay(load_scenario("memory_poisoning"))
        assert "C++" in result.outputs[-1]

    def test_intent_drift_drift_alert_raised_by_cognitive(self):
        result = replay(load_scenario("intent_drift"))
        alerts = [ev for ev in result.transcript
                  if ev.layer is Layer.COGNITIVE and "drift alert" in ev.verdict.reason]
        assert alerts, "cognitive layer should raise the drift alert for the destructive plan"

    def test_intent_drift_restart_never_executes_when_defended(self):
        result = replay(load_scenario("intent_drift"))
        executed = [ev.subject for ev in result.transcript
                    if ev.subject.startswith("execute:")
                    and ev.verdict.decision is Decision.ALLOW]
        assert not any("systemctl" in s or "kill" in s for s in executed)
        assert any("netstat" in s for s in executed)  # the diagnostic step did run

    def test_empty_script_replay(self):
        rec = {
            "id": "empty", "stage": "II", "adversary": "external_content",
            "threat": "Prompt Injection", "expected_layer": "input",
            "expected_verdict": "quarantine",
            "success": {"kind": "any_output_equals", "value": "never"},
            "script": [],
        }
        result = replay(Scenario.from_record(rec))
        assert result.transcript == ()
        assert result.attack_succeeded is False
        assert result.fired_layer is None


class TestAblation:
    @pytest.mark.parametrize("scenario_id", CANONICAL_SCENARIOS)
    def test_single_layer_ablation_matrix(self, scenario_id):
        scenario = load_scenario(scenario_id)
        matrix = ablation_matrix(scenario)
        for layer, attack_succeeded in matrix.items():
            if layer is EXPECTED_FIRED[scenario_id]:
                assert attack_succeeded, f"disabling {layer} should flip {scenario_id}"
            else:
                assert not attack_succeeded, \
                    f"disabling {layer} should not flip {scenario_id}"


class TestConformance:
    def test_full_matrix_conformance(self):
        report = conformance()
        for row in report.rows:
            assert not row.mismatches, (row.scenario_id, row.mismatches)
        assert report.passed

    def test_context_drift_has_two_covering_layers(self):
        scenario = load_scenario("intent_drift")
        assert scenario.covering_layers() == {Layer.COGNITIVE, Layer.DECISION}


class TestScriptedReviewer:
    def _with_reviewer(self, decision):
        rec = {
            "id": "intent_drift_hitl", "stage": "IV", "adversary": "external_content",
            "threat": "Context Drift", "expected_layer": "decision",
            "expected_verdict": "escalate",
            "tenant": "tenant-d",
            "grants": ["file:/workspace/**:read", "file:/workspace/**:write", "proc:*:spawn"],
            "command_results": dict(load_scenario("intent_drift").command_results),
            "success": dict(load_scenario("intent_drift").success),
            "script": [
                {"type": "reviewer_decision", "decision": decision, "reviewer": "dana"},
                *load_scenario("intent_drift").script,
            ],
        }
        return Scenario.from_record(rec)

    def test_reviewer_deny_blocks_restart_session_continues(self):
        result = replay(self._with_reviewer("deny"))
        assert result.attack_succeeded is False
        hitl = [ev for ev in result.transcript if ev.subject.startswith("hitl:")]
        assert len(hitl) == 1 and hitl[0].verdict.decision is Decision.DENY
        assert "dana" in hitl[0].verdict.reason
        assert result.outputs  # the session still produced its report

    def test_reviewer_approve_executes_parked_plan(self):
        result = replay(self._with_reviewer("approve"))
        assert result.attack_succeeded is True  # approval lets the restart run
        hitl = [ev for ev in result.transcript if ev.subject.startswith("hitl:")]
        assert hitl[0].verdict.decision is Decision.ALLOW
