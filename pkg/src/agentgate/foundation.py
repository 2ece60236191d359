"""Initialization-stage defenses: skill vetting, signatures, config policy, manifest.

Skills are small shell-like scripts with declared metadata. Vetting runs
static checks over the parsed statements (dynamic-exec constructs, a
flow-insensitive taint pass from credential sources to network/exec sinks,
socket use against declared capabilities) plus metadata consistency and
priority checks. Only Allow-vetted skills enter the Trusted Execution
Manifest that anchors the runtime trust baseline.
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from agentgate.core import (
    Decision,
    Layer,
    Verdict,
    allow,
    canonical_record,
    deny,
    sha256_hex,
)
from agentgate.patterns import Capability, Domain, PatternError, rbac_within_ceiling


class FoundationError(Exception):
    pass


class ParseError(FoundationError):
    """Skill body is not tokenizable under the script grammar."""


class MissingSignature(FoundationError):
    """Policy mandates a signature and the package carries none."""


class ConfigRejected(FoundationError):
    """Manifest build attempted after a config validation failure."""


class FindingKind(Enum):
    DYNAMIC_EXEC = "DynamicExec"
    CREDENTIAL_HARVEST = "CredentialHarvest"
    UNAUTHORIZED_SOCKET = "UnauthorizedSocket"
    METADATA_MISMATCH = "MetadataMismatch"
    PRIORITY_SPOOF = "PrioritySpoof"


DENY_KINDS = frozenset(FindingKind)


@dataclass(frozen=True)
class Finding:
    kind: FindingKind
    evidence: str


@dataclass(frozen=True)
class SbomEntry:
    name: str
    version: str
    digest: str


@dataclass(frozen=True)
class SkillPackage:
    name: str
    declared_description: str
    declared_capabilities: tuple[Capability, ...]
    body: str
    metadata_priority: int
    signature: Optional[bytes] = None
    sbom: tuple[SbomEntry, ...] = ()
    reversible: bool = False  # undeclared tools are treated as irreversible

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("skill name must be non-empty")

    def body_digest(self) -> str:
        return sha256_hex(self.body.encode("utf-8"))

    def capability_digest(self) -> str:
        rec = {
            "capabilities": sorted(str(c) for c in self.declared_capabilities),
            "reversible": self.reversible,
        }
        return sha256_hex(canonical_record(rec))


@dataclass(frozen=True)
class VettingReport:
    skill: str
    findings: tuple[Finding, ...]
    consistency_score: float
    verdict: Verdict
    package: SkillPackage  # carried for manifest assembly, not serialized

    def to_record(self) -> dict[str, Any]:
        return {
            "skill": self.skill,
            "findings": [{"kind": f.kind.value, "evidence": f.evidence} for f in self.findings],
            "consistency_score": self.consistency_score,
            "verdict": self.verdict.to_record(),
        }


@dataclass(frozen=True)
class VettingPolicy:
    priority_ceiling: int = 10
    min_consistency: float = 0.1
    require_signature: bool = False
    trusted_keys: tuple[Ed25519PublicKey, ...] = ()


@dataclass(frozen=True)
class AgentConfig:
    rbac_bounds: tuple[tuple[str, tuple[str, ...]], ...]  # (role, capability patterns)
    api_scopes: tuple[str, ...]
    memory_limit: int
    sandbox_enabled: bool
    signature_verification_enabled: bool

    def __post_init__(self) -> None:
        if self.memory_limit <= 0:
            raise ValueError("memory_limit must be positive")

    def to_record(self) -> dict[str, Any]:
        return {
            "rbac_bounds": [[role, list(pats)] for role, pats in self.rbac_bounds],
            "api_scopes": list(self.api_scopes),
            "memory_limit": self.memory_limit,
            "sandbox_enabled": self.sandbox_enabled,
            "signature_verification_enabled": self.signature_verification_enabled,
        }


@dataclass(frozen=True)
class DeploymentPolicy:
    """Deployment-side requirements a runtime config must not weaken."""

    require_sandbox: bool = True
    require_signature_verification: bool = False
    capability_ceiling: tuple[str, ...] = ("*:*",)  # rbac patterns

    def to_record(self) -> dict[str, Any]:
        return {
            "require_sandbox": self.require_sandbox,
            "require_signature_verification": self.require_signature_verification,
            "capability_ceiling": list(self.capability_ceiling),
        }


# ---------------------------------------------------------------------------
# Script grammar
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Statement:
    """One parsed line: either an assignment or a command pipeline."""

    raw: str
    assign_var: Optional[str] = None
    assign_value: str = ""
    pipeline: tuple[tuple[str, ...], ...] = ()  # argv per pipe stage
    redirect_target: Optional[str] = None
    redirect_append: bool = False


_ASSIGN_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)=(.*)$")


def parse_script(body: str) -> list[Statement]:
    """Parse the line-oriented shell-like grammar; raises ParseError."""
    statements: list[Statement] = []
    for lineno, raw in enumerate(body.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _ASSIGN_RE.match(line)
        if m and " " not in m.group(1):
            statements.append(Statement(raw=line, assign_var=m.group(1), assign_value=m.group(2)))
            continue
        try:
            tokens = shlex.split(line, posix=True)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        if not tokens:
            continue
        redirect_target = None
        redirect_append = False
        stages: list[tuple[str, ...]] = []
        current: list[str] = []
        it = iter(tokens)
        for tok in it:
            if tok == "|":
                stages.append(tuple(current))
                current = []
            elif tok in (">", ">>"):
                redirect_append = tok == ">>"
                redirect_target = next(it, None)
                if redirect_target is None:
                    raise ParseError(f"line {lineno}: redirect without target")
            else:
                current.append(tok)
        stages.append(tuple(current))
        if any(not s for s in stages):
            raise ParseError(f"line {lineno}: empty pipeline stage")
        statements.append(Statement(raw=line, pipeline=tuple(stages),
                                    redirect_target=redirect_target,
                                    redirect_append=redirect_append))
    return statements


# ---------------------------------------------------------------------------
# Static analysis
# ---------------------------------------------------------------------------

NETWORK_BINARIES = {"curl", "wget", "nc", "ncat", "ssh", "scp", "sftp", "ftp", "telnet"}
DYNAMIC_EXEC_BINARIES = {"eval", "exec", "source"}
SHELL_BINARIES = {"bash", "sh", "zsh", "dash"}
FILE_VERBS = {"cat", "cp", "mv", "rm", "tee", "touch", "mkdir", "sed", "awk", "grep",
              "head", "tail", "chmod", "ln", "echo", "printf", "base64"}
PROCESS_VERBS = {"kill", "pkill", "nohup", "xargs", "env", "systemctl", "service"}

_CREDENTIAL_NAME_RE = re.compile(r"(SECRET|TOKEN|KEY|PASSWORD|PASSWD|CRED|AUTH)", re.IGNORECASE)
_CREDENTIAL_PATH_RE = re.compile(r"(\.ssh/|id_rsa|id_ed25519|\.env\b|credentials|\.aws/)")
_VAR_REF_RE = re.compile(r"\$\{?([A-Za-z_][A-Za-z0-9_]*)\}?")
_WORD_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


def behavior_summary(statements: Iterable[Statement]) -> set[str]:
    """Capability-relevant token set: verbs, targets, and output literals."""
    summary: set[str] = set()
    for st in statements:
        if st.assign_var is not None:
            continue
        for stage in st.pipeline:
            binary = stage[0]
            if binary in NETWORK_BINARIES | DYNAMIC_EXEC_BINARIES | SHELL_BINARIES \
                    | FILE_VERBS | PROCESS_VERBS:
                summary.add(binary.lower())
                if binary in {"echo", "printf"}:
                    for arg in stage[1:]:
                        summary |= _tokens(arg)
                elif binary in NETWORK_BINARIES:
                    for arg in stage[1:]:
                        summary |= _tokens(arg)
                else:
                    for arg in stage[1:]:
                        if not arg.startswith("-"):
                            summary |= _tokens(arg)
            else:
                summary.add(binary.lower())
        if st.redirect_target:
            summary |= _tokens(st.redirect_target)
    return summary


def consistency_score(pkg: SkillPackage, statements: Iterable[Statement]) -> float:
    """Jaccard overlap of the body's behavior summary with the declared description."""
    body_tokens = behavior_summary(statements)
    desc_tokens = _tokens(pkg.declared_description)
    if not body_tokens and not desc_tokens:
        return 1.0
    union = body_tokens | desc_tokens
    if not union:
        return 1.0
    return len(body_tokens & desc_tokens) / len(union)


def _statement_var_refs(st: Statement) -> set[str]:
    refs: set[str] = set()
    text = st.assign_value if st.assign_var is not None else st.raw
    for m in _VAR_REF_RE.finditer(text):
        refs.add(m.group(1))
    return refs


def taint_findings(statements: list[Statement]) -> list[Finding]:
    """Flow-insensitive taint pass: credential sources reaching network/exec sinks."""
    tainted: set[str] = set()
    # Seed: credential-named variables and assignments reading credential files/env.
    for st in statements:
        if st.assign_var is None:
            continue
        if _CREDENTIAL_NAME_RE.search(st.assign_var):
            tainted.add(st.assign_var)
        if _CREDENTIAL_PATH_RE.search(st.assign_value):
            tainted.add(st.assign_var)
        for ref in _statement_var_refs(st):
            if _CREDENTIAL_NAME_RE.search(ref):
                tainted.add(st.assign_var)
    # Propagate assignments to fixpoint (flow-insensitive: order ignored).
    changed = True
    while changed:
        changed = False
        for st in statements:
            if st.assign_var is None or st.assign_var in tainted:
                continue
            if _statement_var_refs(st) & tainted:
                tainted.add(st.assign_var)
                changed = True
    findings: list[Finding] = []
    for st in statements:
        if st.assign_var is not None:
            continue
        refs = _VAR_REF_RE.findall(st.raw)
        stage_binaries = {stage[0] for stage in st.pipeline}
        is_network = bool(stage_binaries & NETWORK_BINARIES)
        is_exec = bool(stage_binaries & (DYNAMIC_EXEC_BINARIES | SHELL_BINARIES))
        carries_taint = bool(set(refs) & tainted) \
            or any(_CREDENTIAL_NAME_RE.search(r) for r in refs) \
            or _CREDENTIAL_PATH_RE.search(st.raw)
        if carries_taint and (is_network or is_exec):
            findings.append(Finding(FindingKind.CREDENTIAL_HARVEST, st.raw))
    return findings


def dynamic_exec_findings(statements: list[Statement]) -> list[Finding]:
    findings = []
    for st in statements:
        if st.assign_var is not None:
            if "$(" in st.assign_value and any(b in st.assign_value for b in DYNAMIC_EXEC_BINARIES):
                findings.append(Finding(FindingKind.DYNAMIC_EXEC, st.raw))
            continue
        for i, stage in enumerate(st.pipeline):
            binary = stage[0]
            if binary in DYNAMIC_EXEC_BINARIES:
                findings.append(Finding(FindingKind.DYNAMIC_EXEC, st.raw))
            elif binary in SHELL_BINARIES and "-c" in stage[1:]:
                findings.append(Finding(FindingKind.DYNAMIC_EXEC, st.raw))
            elif binary in SHELL_BINARIES and i > 0:
                # something piped into a shell
                findings.append(Finding(FindingKind.DYNAMIC_EXEC, st.raw))
    return findings


def socket_findings(pkg: SkillPackage, statements: list[Statement]) -> list[Finding]:
    has_network_grant = any(c.domain is Domain.NETWORK for c in pkg.declared_capabilities)
    findings = []
    for st in statements:
        if st.assign_var is not None:
            continue
        for stage in st.pipeline:
            if stage[0] in NETWORK_BINARIES and not has_network_grant:
                findings.append(Finding(FindingKind.UNAUTHORIZED_SOCKET, st.raw))
    return findings


def vet_skill(pkg: SkillPackage, policy: VettingPolicy) -> VettingReport:
    """Static vetting; pure function of (pkg, policy)."""
    statements = parse_script(pkg.body)

    findings: list[Finding] = []
    findings.extend(dynamic_exec_findings(statements))
    findings.extend(taint_findings(statements))
    findings.extend(socket_findings(pkg, statements))

    score = consistency_score(pkg, statements)
    body_tokens = behavior_summary(statements)
    desc_tokens = _tokens(pkg.declared_description)
    if (body_tokens or desc_tokens) and score < policy.min_consistency:
        findings.append(Finding(
            FindingKind.METADATA_MISMATCH,
            f"consistency {score:.3f} below {policy.min_consistency}",
        ))
    if pkg.metadata_priority > policy.priority_ceiling:
        findings.append(Finding(
            FindingKind.PRIORITY_SPOOF,
            f"priority {pkg.metadata_priority} above ceiling {policy.priority_ceiling}",
        ))

    signature_ok = True
    signature_reason = ""
    if policy.require_signature:
        try:
            signature_ok = verify_signature(pkg, policy.trusted_keys)
        except MissingSignature:
            signature_ok = False
            signature_reason = "signature required but absent"
        if not signature_ok and not signature_reason:
            signature_reason = "signature invalid under trusted keys"

    if findings or not signature_ok:
        reasons = [f"{f.kind.value}: {f.evidence}" for f in findings]
        if not signature_ok:
            reasons.append(signature_reason)
        verdict = deny(Layer.FOUNDATION, "; ".join(reasons))
    else:
        verdict = allow(Layer.FOUNDATION, f"vetted, consistency {score:.3f}")

    return VettingReport(
        skill=pkg.name,
        findings=tuple(findings),
        consistency_score=score,
        verdict=verdict,
        package=pkg,
    )


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

def sign_body(body: str, private_key: Ed25519PrivateKey) -> bytes:
    """Detached signature over sha256(body)."""
    return private_key.sign(hashlib.sha256(body.encode("utf-8")).digest())


def verify_signature(pkg: SkillPackage, trusted_keys: Iterable[Ed25519PublicKey]) -> bool:
    if pkg.signature is None:
        raise MissingSignature(f"skill {pkg.name} has no signature")
    digest = hashlib.sha256(pkg.body.encode("utf-8")).digest()
    for key in trusted_keys:
        try:
            key.verify(pkg.signature, digest)
            return True
        except InvalidSignature:
            continue
    return False


def load_public_key(path: str | Path) -> Ed25519PublicKey:
    key = serialization.load_pem_public_key(Path(path).read_bytes())
    if not isinstance(key, Ed25519PublicKey):
        raise FoundationError(f"{path} is not an Ed25519 public key")
    return key


def load_private_key(path: str | Path) -> Ed25519PrivateKey:
    key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    if not isinstance(key, Ed25519PrivateKey):
        raise FoundationError(f"{path} is not an Ed25519 private key")
    return key


# ---------------------------------------------------------------------------
# Config validation and manifest
# ---------------------------------------------------------------------------

def validate_config(cfg: AgentConfig, policy: DeploymentPolicy) -> Verdict:
    if policy.require_sandbox and not cfg.sandbox_enabled:
        return deny(Layer.FOUNDATION, "config disables sandboxing required by deployment policy")
    if policy.require_signature_verification and not cfg.signature_verification_enabled:
        return deny(Layer.FOUNDATION, "config disables signature verification required by deployment policy")
    ceiling = list(policy.capability_ceiling)
    for role, bounds in cfg.rbac_bounds:
        for bound in bounds:
            try:
                if not rbac_within_ceiling(bound, ceiling):
                    return deny(
                        Layer.FOUNDATION,
                        f"rbac bound {bound!r} for role {role!r} exceeds policy ceiling {ceiling}",
                    )
            except PatternError as exc:
                return deny(Layer.FOUNDATION, f"malformed rbac bound {bound!r}: {exc}")
    return allow(Layer.FOUNDATION, "config within deployment policy")


@dataclass(frozen=True)
class TrustedExecutionManifest:
    created_at: int
    skills: tuple[tuple[str, str, str], ...]  # (name, body digest, capability digest)
    config_digest: str
    policy_digest: str
    manifest_hash: str

    def body_record(self) -> dict[str, Any]:
        return {
            "created_at": self.created_at,
            "skills": [list(s) for s in self.skills],
            "config_digest": self.config_digest,
            "policy_digest": self.policy_digest,
        }

    def to_record(self) -> dict[str, Any]:
        rec = self.body_record()
        rec["manifest_hash"] = self.manifest_hash
        return rec

    def recompute_hash(self) -> str:
        return sha256_hex(canonical_record(self.body_record()))

    def has_skill(self, name: str) -> bool:
        return any(s[0] == name for s in self.skills)

    def skill_names(self) -> list[str]:
        return [s[0] for s in self.skills]

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "TrustedExecutionManifest":
        return cls(
            created_at=rec["created_at"],
            skills=tuple(tuple(s) for s in rec["skills"]),
            config_digest=rec["config_digest"],
            policy_digest=rec["policy_digest"],
            manifest_hash=rec["manifest_hash"],
        )


def build_manifest(reports: list[VettingReport], cfg: AgentConfig,
                   policy: DeploymentPolicy, created_at: int = 0) -> TrustedExecutionManifest:
    """Assemble the manifest from Allow-vetted skills; deterministic in its inputs."""
    if validate_config(cfg, policy).decision is not Decision.ALLOW:
        raise ConfigRejected("config failed deployment-policy validation")
    entries = sorted(
        (r.package.name, r.package.body_digest(), r.package.capability_digest())
        for r in reports
        if r.verdict.decision is Decision.ALLOW
    )
    config_digest = sha256_hex(canonical_record(cfg.to_record()))
    policy_digest = sha256_hex(canonical_record(policy.to_record()))
    body = {
        "created_at": created_at,
        "skills": [list(e) for e in entries],
        "config_digest": config_digest,
        "policy_digest": policy_digest,
    }
    manifest_hash = sha256_hex(canonical_record(body))
    return TrustedExecutionManifest(
        created_at=created_at,
        skills=tuple(entries),
        config_digest=config_digest,
        policy_digest=policy_digest,
        manifest_hash=manifest_hash,
    )


@dataclass(frozen=True)
class ToolInfo:
    """Runtime view of one registered tool, anchored by manifest digests."""

    name: str
    capabilities: tuple[Capability, ...]
    reversible: bool
    priority: int
    body: str = ""


class ToolRegistry:
    """Vetted skills plus builtin pseudo-tools available to the planner."""

    def __init__(self) -> None:
        self._tools: dict[str, ToolInfo] = {}

    def register(self, info: ToolInfo) -> None:
        self._tools[info.name] = info

    def register_package(self, pkg: SkillPackage) -> None:
        self.register(ToolInfo(
            name=pkg.name,
            capabilities=pkg.declared_capabilities,
            reversible=pkg.reversible,
            priority=pkg.metadata_priority,
            body=pkg.body,
        ))

    def has_tool(self, name: str) -> bool:
        return name in self._tools

    def get(self, name: str) -> ToolInfo:
        return self._tools[name]

    def tool_reversible(self, name: str) -> bool:
        # fail closed: unknown or undeclared means irreversible
        info = self._tools.get(name)
        return info.reversible if info else False

    def tool_capabilities(self, name: str) -> tuple[Capability, ...]:
        info = self._tools.get(name)
        return info.capabilities if info else ()

    def names(self) -> list[str]:
        return sorted(self._tools)

    def route(self, candidates: list[str]) -> Optional[str]:
        """Pick the installed candidate with the highest metadata priority."""
        installed = [self._tools[c] for c in candidates if c in self._tools]
        if not installed:
            return None
        return max(installed, key=lambda t: t.priority).name


# ---------------------------------------------------------------------------
# On-disk skill packages
# ---------------------------------------------------------------------------

def load_skill_dir(path: str | Path) -> SkillPackage:
    """Load a skill package directory: manifest, body, optional signature/sbom."""
    root = Path(path)
    meta = json.loads((root / "manifest").read_text("utf-8"))
    body = (root / "body").read_text("utf-8")
    signature = None
    sig_path = root / "signature"
    if sig_path.exists():
        signature = bytes.fromhex(sig_path.read_text("utf-8").strip())
    sbom: tuple[SbomEntry, ...] = ()
    sbom_path = root / "sbom"
    if sbom_path.exists():
        sbom = tuple(
            SbomEntry(name=e["name"], version=e["version"], digest=e["digest"])
            for e in json.loads(sbom_path.read_text("utf-8"))
        )
    return SkillPackage(
        name=meta["name"],
        declared_description=meta["description"],
        declared_capabilities=tuple(Capability.parse(c) for c in meta.get("capabilities", [])),
        body=body,
        metadata_priority=int(meta.get("priority", 0)),
        signature=signature,
        sbom=sbom,
        reversible=bool(meta.get("reversible", False)),
    )
