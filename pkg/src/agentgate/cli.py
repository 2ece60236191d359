"""Command-line entry points: inputguard, memguard, harness, gateway.

Exit codes:
  inputguard scan       0 allow, 1 sanitize, 2 quarantine
  memguard verify       0 verified, 1 mismatch
  memguard drift        0 within threshold, 1 alert
  harness replay        0 attack blocked, 1 attack succeeded, 2 scenario error
  harness conformance   0 matrix holds, 1 mismatch
  gateway vet           0 allow, 2 deny, 3 parse error
  gateway audit verify  0 chain verifies, 1 corrupt
  gateway provision     0 ok, 2 config rejected
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from agentgate.core import ALL_LAYERS, Decision, Layer, Origin, TrustTier


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# inputguard
# ---------------------------------------------------------------------------

def inputguard_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="inputguard", description="content firewall")
    sub = parser.add_subparsers(dest="cmd", required=True)
    scan_p = sub.add_parser("scan", help="scan a document for directive intent")
    scan_p.add_argument("file")
    scan_p.add_argument("--format", choices=["html", "md", "txt"], default="txt")
    scan_p.add_argument("--channel", default="retrieval")
    args = parser.parse_args(argv)

    from agentgate.inputguard import respond, scan, segment

    text = Path(args.file).read_text("utf-8")
    doc = segment(text, Origin(args.channel, args.file), fmt=args.format)
    scored, report = scan(doc)
    _, verdict = respond(report, scored)
    _print_json({
        "document": args.file,
        "max_score": report.max_score,
        "verdict": verdict.decision.value,
        "reason": verdict.reason,
        "segments": [
            {"id": sid, "score": score, "patterns": list(patterns)}
            for sid, score, patterns in report.per_segment
        ],
    })
    return {"allow": 0, "sanitize": 1, "quarantine": 2}.get(verdict.decision.value, 2)


# ---------------------------------------------------------------------------
# memguard
# ---------------------------------------------------------------------------

def memguard_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="memguard", description="memory integrity")
    parser.add_argument("--store", default="memory.mem", help="per-tenant record file")
    sub = parser.add_subparsers(dest="cmd", required=True)
    snap_p = sub.add_parser("snapshot")
    snap_p.add_argument("--label", required=True)
    verify_p = sub.add_parser("verify")
    verify_p.add_argument("--label", required=True)
    roll_p = sub.add_parser("rollback")
    roll_p.add_argument("--label", required=True)
    drift_p = sub.add_parser("drift")
    drift_p.add_argument("--objective", required=True, help="objective text or @file")
    drift_p.add_argument("--context", required=True, help="context text or @file")
    drift_p.add_argument("--threshold", type=float, default=0.6)
    args = parser.parse_args(argv)

    from agentgate.memguard import FrozenObjective, MemoryStore, drift_score

    def _read(value: str) -> str:
        return Path(value[1:]).read_text("utf-8") if value.startswith("@") else value

    if args.cmd == "drift":
        objective = FrozenObjective.from_text(_read(args.objective))
        score = drift_score(_read(args.context), objective)
        alert = score < args.threshold
        _print_json({"score": score, "threshold": args.threshold, "alert": alert})
        return 1 if alert else 0

    import time
    store = MemoryStore(path=args.store)
    now = int(time.time() * 1000)
    if args.cmd == "snapshot":
        cp = store.snapshot(args.label, created_at=now)
        _print_json(cp.to_record())
        return 0
    if args.cmd == "verify":
        cp = store._checkpoints.get(args.label)
        if cp is None:
            print(f"unknown checkpoint {args.label!r}", file=sys.stderr)
            return 1
        ok = store.verify(cp)
        _print_json({"label": args.label, "root": cp.root, "verified": ok})
        return 0 if ok else 1
    if args.cmd == "rollback":
        cp = store._checkpoints.get(args.label)
        if cp is None:
            print(f"unknown checkpoint {args.label!r}", file=sys.stderr)
            return 1
        store.rollback(cp)
        _print_json({"label": args.label, "root": store.root(),
                     "entries": len(store.entries())})
        return 0
    return 2


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------

def harness_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="harness", description="attack corpus replay")
    sub = parser.add_subparsers(dest="cmd", required=True)
    replay_p = sub.add_parser("replay")
    replay_p.add_argument("scenario_id")
    replay_p.add_argument("--disable", action="append", default=[],
                          choices=[l.value for l in ALL_LAYERS])
    replay_p.add_argument("--transcript", action="store_true",
                          help="print the full audit transcript")
    sub.add_parser("conformance")
    sub.add_parser("list")
    args = parser.parse_args(argv)

    from agentgate.harness import (
        CANONICAL_SCENARIOS,
        ScenarioFormatError,
        conformance,
        load_scenario,
        replay,
    )

    if args.cmd == "list":
        for sid in CANONICAL_SCENARIOS:
            print(sid)
        return 0

    if args.cmd == "replay":
        try:
            scenario = load_scenario(args.scenario_id)
        except ScenarioFormatError as exc:
            print(f"scenario error: {exc}", file=sys.stderr)
            return 2
        enabled = frozenset(ALL_LAYERS) - {Layer(l) for l in args.disable}
        result = replay(scenario, enabled_layers=enabled)
        payload = {
            "scenario": scenario.id,
            "disabled_layers": sorted(args.disable),
            "fired_layer": result.fired_layer.value if result.fired_layer else None,
            "attack_succeeded": result.attack_succeeded,
            "outputs": list(result.outputs),
        }
        if args.transcript:
            payload["transcript"] = [ev.to_record() for ev in result.transcript]
        _print_json(payload)
        return 1 if result.attack_succeeded else 0

    report = conformance()
    for row in report.rows:
        covering = ",".join(sorted(l.value for l in row.covering_layers))
        status = "ok" if not row.mismatches else "MISMATCH"
        print(f"{row.scenario_id:12s} threat={row.threat!r} fired="
              f"{row.fired_layer.value if row.fired_layer else None} "
              f"covering=[{covering}] {status}")
        for mismatch in row.mismatches:
            print(f"  - {mismatch}")
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# gateway
# ---------------------------------------------------------------------------

def _load_run_config(path: str):
    from agentgate.gateway import GatewayConfig

    rec = json.loads(Path(path).read_text("utf-8"))
    gw_rec = rec.get("gateway", {})
    layers = gw_rec.pop("enabled_layers", None)
    if layers is not None:
        gw_rec["enabled_layers"] = frozenset(Layer(l) for l in layers)
    listen_env = os.environ.get("AGENTGATE_LISTEN")
    if listen_env:
        host, _, port = listen_env.partition(":")
        gw_rec["listen_host"] = host or gw_rec.get("listen_host", "127.0.0.1")
        if port:
            gw_rec["listen_port"] = int(port)
    return GatewayConfig(**gw_rec), rec


def gateway_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gateway", description="lifecycle security gateway")
    sub = parser.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--scenario", help="serve while replaying this scenario")

    prov_p = sub.add_parser("provision")
    prov_p.add_argument("skills_dir")
    prov_p.add_argument("--out", default="manifest.json")

    vet_p = sub.add_parser("vet")
    vet_p.add_argument("skill_dir")

    audit_p = sub.add_parser("audit")
    audit_sub = audit_p.add_subparsers(dest="audit_cmd", required=True)
    audit_verify_p = audit_sub.add_parser("verify")
    audit_verify_p.add_argument("audit_file")

    args = parser.parse_args(argv)

    if args.cmd == "vet":
        from agentgate.foundation import ParseError, VettingPolicy, load_skill_dir, vet_skill

        try:
            pkg = load_skill_dir(args.skill_dir)
            report = vet_skill(pkg, VettingPolicy())
        except ParseError as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return 3
        _print_json(report.to_record())
        return 0 if report.verdict.decision is Decision.ALLOW else 2

    if args.cmd == "provision":
        from agentgate.foundation import (
            AgentConfig, ConfigRejected, DeploymentPolicy, VettingPolicy,
            build_manifest, load_skill_dir, vet_skill,
        )

        policy = VettingPolicy()
        reports = []
        for entry in sorted(Path(args.skills_dir).iterdir()):
            if entry.is_dir():
                report = vet_skill(load_skill_dir(entry), policy)
                reports.append(report)
                print(f"{report.skill}: {report.verdict.decision.value} "
                      f"(consistency {report.consistency_score:.3f})")
        cfg = AgentConfig(
            rbac_bounds=(("agent", ("process:spawn", "file:read", "file:write")),),
            api_scopes=("chat",), memory_limit=1 << 26,
            sandbox_enabled=True, signature_verification_enabled=True,
        )
        try:
            manifest = build_manifest(reports, cfg, DeploymentPolicy(), created_at=0)
        except ConfigRejected as exc:
            print(f"config rejected: {exc}", file=sys.stderr)
            return 2
        Path(args.out).write_text(json.dumps(manifest.to_record(), indent=2) + "\n")
        print(f"manifest {manifest.manifest_hash} -> {args.out}")
        return 0

    if args.cmd == "audit":
        from agentgate.core import AuditChain

        chain = AuditChain.load(args.audit_file)
        ok = chain.verify()
        print(f"{args.audit_file}: {len(chain)} events, "
              f"{'verified' if ok else 'CORRUPT'}")
        return 0 if ok else 1

    # run
    config, rec = _load_run_config(args.config)
    from agentgate.gateway import Gateway, WallClock
    from agentgate.server import ReplayRunner, serve

    if args.scenario:
        from agentgate.harness import build_gateway, load_scenario, replay

        scenario = load_scenario(args.scenario)
        gateway = build_gateway(
            scenario,
            hitl_deadline_ms=config.hitl_deadline_ms,
            audit_path=rec.get("audit_path"),
            pending_path=rec.get("pending_path"),
            clock=WallClock(),
        )
        gateway.config = config
        runner = ReplayRunner(lambda: replay(scenario, gateway=gateway))
        serve(gateway, replay_runner=runner, host=config.listen_host,
              port=config.listen_port)
        return 0

    gateway = Gateway(config, clock=WallClock(),
                      audit_path=rec.get("audit_path"),
                      pending_path=rec.get("pending_path"))
    skills_dir = rec.get("skills_dir")
    packages = []
    if skills_dir:
        from agentgate.foundation import load_skill_dir

        packages = [load_skill_dir(p) for p in sorted(Path(skills_dir).iterdir())
                    if p.is_dir()]
    gateway.provision(packages)
    serve(gateway)
    return 0


if __name__ == "__main__":
    sys.exit(gateway_main())
