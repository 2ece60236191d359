"""Execution-stage defenses: capability checks, chain analysis, transactions, HITL.

Commands are classified into (domain, resource, action) triples by a
shell-subset parser backed by a binary-effect table; unknown binaries fail
closed as process spawns. Capability checks are deny-by-default
subsumption against the session grant set. The chain analyzer maintains a
byte-accurate view of session-written artifacts (including stream-edit
transforms and embedded encodings) so staged payloads are reconstructed and
matched against the shipped signature file before anything executes.
Real execution happens inside a discardable workspace overlay watched by a
resource monitor; high-risk steps wait in the pending queue for a human
decision and expire to a deny.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import posixpath
import re
import shlex
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional

import psutil

from agentgate.core import Decision, Layer, Verdict, allow, deny, sha256_hex
from agentgate.patterns import Action, Capability, Domain, Resource


class ExecguardError(Exception):
    pass


class ClassifierFailure(ExecguardError):
    """Command could not be classified; callers must treat this as a deny."""


class AlreadyDecided(ExecguardError):
    pass


class UnknownPending(ExecguardError):
    pass


# ---------------------------------------------------------------------------
# Command classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triple:
    domain: Domain
    resource: str
    action: Action

    def __str__(self) -> str:
        return f"{self.domain.value}:{self.resource}:{self.action.value}"

    def as_resource(self) -> Resource:
        return Resource(self.domain, self.resource)


@dataclass(frozen=True)
class ArtifactEffect:
    """One mutation of a session artifact implied by a command."""

    path: str
    kind: str  # write | append | strip_prefix | chmod_exec | unknown_write
    content: Optional[str] = None  # literal content for write/append
    prefix: Optional[str] = None  # for strip_prefix


@dataclass(frozen=True)
class Invocation:
    """An execution of an artifact, optionally through a decode pipeline."""

    path: str
    decoded: bool = False  # content is base64-decoded before reaching the shell


@dataclass(frozen=True)
class ClassifiedCommand:
    raw: str
    triples: tuple[Triple, ...]
    effects: tuple[ArtifactEffect, ...]
    invocations: tuple[Invocation, ...]
    consumed_artifacts: tuple[str, ...]  # artifacts read as input (for LotL)


READ_BINARIES = {"cat", "head", "tail", "grep", "less", "more", "wc", "ls", "awk",
                 "tr", "cut", "sort", "uniq", "base64"}
NET_BINARIES = {"curl", "wget", "nc", "ncat", "ssh", "scp", "sftp"}
SHELL_BINARIES = {"bash", "sh", "zsh", "dash"}
DUAL_USE_BINARIES = {"sed", "base64", "awk", "tr", "xxd", "openssl"}
_SED_STRIP_RE = re.compile(r"^s/\^([^/]*)//g?$")
_URL_RE = re.compile(r"^[a-z][a-z0-9+.-]*://([^/:]+)(?::(\d+))?")


def _abspath(path: str, cwd: str) -> str:
    if not path.startswith("/"):
        path = posixpath.join(cwd, path)
    return posixpath.normpath(path)


def _path_args(argv: list[str]) -> list[str]:
    return [a for a in argv[1:] if not a.startswith("-")]


def _split_statements(tokens: list[str]) -> list[list[str]]:
    statements: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        if tok in (";", "&&", "||"):
            if current:
                statements.append(current)
                current = []
        else:
            current.append(tok)
    if current:
        statements.append(current)
    return statements


def _split_pipeline(tokens: list[str]) -> tuple[list[list[str]], Optional[str], bool]:
    stages: list[list[str]] = []
    current: list[str] = []
    redirect: Optional[str] = None
    append = False
    it = iter(range(len(tokens)))
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "|":
            stages.append(current)
            current = []
        elif tok in (">", ">>"):
            if i + 1 >= len(tokens):
                raise ClassifierFailure("redirect without target")
            append = tok == ">>"
            redirect = tokens[i + 1]
            i += 1
        else:
            current.append(tok)
        i += 1
    stages.append(current)
    if any(not s for s in stages):
        raise ClassifierFailure("empty pipeline stage")
    return stages, redirect, append


def classify_command(command: str, cwd: str = "/workspace") -> ClassifiedCommand:
    """Map a shell command onto effect triples, artifact effects, and invocations."""
    try:
        tokens = shlex.split(command, posix=True)
    except ValueError as exc:
        raise ClassifierFailure(f"unparseable command: {exc}") from exc
    if not tokens:
        raise ClassifierFailure("empty command")

    triples: list[Triple] = []
    effects: list[ArtifactEffect] = []
    invocations: list[Invocation] = []
    consumed: list[str] = []

    for statement in _split_statements(tokens):
        stages, redirect, append_mode = _split_pipeline(statement)
        stage_literal_output: Optional[str] = None
        decode_stage_input: Optional[str] = None

        for stage_idx, argv in enumerate(stages):
            binary = argv[0]
            args = argv[1:]
            paths = [_abspath(p, cwd) for p in _path_args(argv)]

            if binary in ("echo", "printf"):
                stage_literal_output = " ".join(args)
            elif binary in READ_BINARIES:
                for p in paths:
                    triples.append(Triple(Domain.FILESYSTEM, p, Action.READ))
                    consumed.append(p)
                if binary == "base64" and any(a in ("-d", "--decode") for a in args):
                    decode_stage_input = paths[0] if paths else decode_stage_input
            elif binary == "tee":
                for p in paths:
                    triples.append(Triple(Domain.FILESYSTEM, p, Action.WRITE))
                    effects.append(ArtifactEffect(p, "unknown_write"))
            elif binary in ("cp", "mv"):
                if len(paths) >= 2:
                    triples.append(Triple(Domain.FILESYSTEM, paths[0], Action.READ))
                    triples.append(Triple(Domain.FILESYSTEM, paths[-1], Action.WRITE))
                    effects.append(ArtifactEffect(paths[-1], "unknown_write"))
            elif binary in ("rm", "rmdir"):
                for p in paths:
                    triples.append(Triple(Domain.FILESYSTEM, p, Action.WRITE))
            elif binary in ("mkdir", "touch"):
                for p in paths:
                    triples.append(Triple(Domain.FILESYSTEM, p, Action.WRITE))
            elif binary == "chmod":
                positional = [a for a in args if not a.startswith("-")]
                mode = positional[0] if positional else ""
                for f in positional[1:]:
                    p = _abspath(f, cwd)
                    triples.append(Triple(Domain.FILESYSTEM, p, Action.WRITE))
                    if "+x" in mode or mode in ("755", "775", "777", "751"):
                        effects.append(ArtifactEffect(p, "chmod_exec"))
            elif binary == "sed":
                inplace = any(a == "-i" or a.startswith("-i") for a in args)
                script = next((a for a in args if not a.startswith("-")), None)
                file_args = [a for a in args if not a.startswith("-")][1:]
                file_paths = [_abspath(f, cwd) for f in file_args]
                for p in file_paths:
                    consumed.append(p)
                    if inplace:
                        triples.append(Triple(Domain.FILESYSTEM, p, Action.WRITE))
                        m = _SED_STRIP_RE.match(script or "")
                        if m:
                            effects.append(ArtifactEffect(p, "strip_prefix", prefix=m.group(1)))
                        else:
                            effects.append(ArtifactEffect(p, "unknown_write"))
                    else:
                        triples.append(Triple(Domain.FILESYSTEM, p, Action.READ))
            elif binary in NET_BINARIES:
                host = None
                for a in args:
                    m = _URL_RE.match(a)
                    if m:
                        default_port = "80" if a.startswith("http://") else "443"
                        host = m.group(1) + ":" + (m.group(2) or default_port)
                        break
                if host is None and binary in ("nc", "ncat") and len(args) >= 2:
                    host = f"{args[-2]}:{args[-1]}"
                if host is None:
                    host = next((a for a in args if not a.startswith("-")), "unknown")
                triples.append(Triple(Domain.NETWORK, host, Action.CONNECT))
                for a in args:
                    if a.startswith("@"):
                        consumed.append(_abspath(a[1:], cwd))
                        triples.append(Triple(Domain.FILESYSTEM, _abspath(a[1:], cwd), Action.READ))
            elif binary in SHELL_BINARIES:
                if "-c" in args:
                    triples.append(Triple(Domain.PROCESS, binary, Action.SPAWN))
                elif stage_idx > 0:
                    # something is piped into a shell: executing decoded input
                    triples.append(Triple(Domain.PROCESS, binary, Action.SPAWN))
                    if decode_stage_input:
                        invocations.append(Invocation(decode_stage_input, decoded=True))
                elif paths:
                    script = paths[0]
                    triples.append(Triple(Domain.PROCESS, script, Action.EXECUTE))
                    triples.append(Triple(Domain.FILESYSTEM, script, Action.READ))
                    invocations.append(Invocation(script))
                else:
                    triples.append(Triple(Domain.PROCESS, binary, Action.SPAWN))
            elif binary in ("python", "python3", "perl", "ruby", "node"):
                if paths:
                    triples.append(Triple(Domain.PROCESS, paths[0], Action.EXECUTE))
                    triples.append(Triple(Domain.FILESYSTEM, paths[0], Action.READ))
                    invocations.append(Invocation(paths[0]))
                else:
                    triples.append(Triple(Domain.PROCESS, binary, Action.SPAWN))
            elif binary.startswith("./") or binary.startswith("/"):
                script = _abspath(binary, cwd)
                triples.append(Triple(Domain.PROCESS, script, Action.EXECUTE))
                invocations.append(Invocation(script))
            else:
                # unknown binary: fail closed as a process spawn of its own name
                triples.append(Triple(Domain.PROCESS, binary, Action.SPAWN))

        if redirect is not None:
            target = _abspath(redirect, cwd)
            triples.append(Triple(Domain.FILESYSTEM, target, Action.WRITE))
            kind = "append" if append_mode else "write"
            if stage_literal_output is not None:
                effects.append(ArtifactEffect(target, kind, content=stage_literal_output))
            else:
                effects.append(ArtifactEffect(target, "unknown_write"))

    return ClassifiedCommand(
        raw=command,
        triples=tuple(triples),
        effects=tuple(effects),
        invocations=tuple(invocations),
        consumed_artifacts=tuple(consumed),
    )


# ---------------------------------------------------------------------------
# Capability enforcement
# ---------------------------------------------------------------------------

def check_capability(classified: ClassifiedCommand,
                     grants: Iterable[Capability]) -> Verdict:
    """Allow only when every triple is subsumed by some grant (deny-by-default)."""
    grant_list = list(grants)
    for triple in classified.triples:
        need = Capability(triple.domain, triple.resource, triple.action)
        if not any(g.subsumes(need) for g in grant_list):
            return deny(
                Layer.EXECUTION,
                f"no grant covers {triple} (deny-by-default)",
            )
    return allow(Layer.EXECUTION, f"all {len(classified.triples)} effect(s) granted")


# ---------------------------------------------------------------------------
# Chain analysis
# ---------------------------------------------------------------------------

class ChainFindingKind(Enum):
    STAGED_PAYLOAD = "staged_payload"
    WRITE_THEN_INVOKE = "write_then_invoke"
    LIVING_OFF_THE_LAND = "living_off_the_land"


@dataclass(frozen=True)
class ChainFinding:
    kind: ChainFindingKind
    artifact: str
    payload: str
    signature: str = ""

    def reason(self) -> str:
        if self.kind is ChainFindingKind.STAGED_PAYLOAD:
            return (f"staged payload in {self.artifact} reconstructs to "
                    f"malicious signature: {self.payload!r}")
        if self.kind is ChainFindingKind.WRITE_THEN_INVOKE:
            return f"invocation of session-written artifact {self.artifact}"
        return f"dual-use utility consuming externally tainted artifact {self.artifact}"


@dataclass
class Artifact:
    path: str
    content: Optional[str]  # None when written opaquely
    executable: bool = False
    taint: set[str] = field(default_factory=set)
    writer_actions: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class ExecutedAction:
    command: str
    triples: tuple[Triple, ...]
    artifacts: tuple[str, ...]
    payload_digests: tuple[str, ...]


def _load_signatures() -> list[tuple[str, Optional[re.Pattern]]]:
    sigs: list[tuple[str, Optional[re.Pattern]]] = []
    text = resources.files("agentgate.data").joinpath("signatures.txt").read_text("utf-8")
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        if line.startswith("re:"):
            sigs.append((line, re.compile(line[3:])))
        else:
            sigs.append((line, None))
    return sigs


SIGNATURES = _load_signatures()


def match_signature(payload: str) -> Optional[str]:
    for raw, pattern in SIGNATURES:
        if pattern is None:
            if raw in payload:
                return raw
        elif pattern.search(payload):
            return raw
    return None


def _decode_candidates(content: str, depth: int = 2) -> list[str]:
    """The content plus up to `depth` levels of base64 decoding."""
    candidates = [content]
    current = content
    for _ in range(depth):
        stripped = "".join(current.split())
        if not stripped:
            break
        try:
            decoded = base64.b64decode(stripped, validate=True).decode("utf-8")
        except (binascii.Error, UnicodeDecodeError, ValueError):
            break
        candidates.append(decoded)
        current = decoded
    return candidates


class SessionTrace:
    """Stateful per-session record of executed actions and their artifacts."""

    def __init__(self, session_id: str, cwd: str = "/workspace"):
        self.session_id = session_id
        self.cwd = cwd
        self.actions: list[ExecutedAction] = []
        self.artifacts: dict[str, Artifact] = {}

    def artifact(self, path: str) -> Optional[Artifact]:
        return self.artifacts.get(path)

    def _apply_effect(self, effect: ArtifactEffect, provenance: set[str]) -> None:
        art = self.artifacts.get(effect.path)
        if art is None:
            art = Artifact(path=effect.path, content="")
            self.artifacts[effect.path] = art
        art.taint |= provenance
        art.writer_actions.append(len(self.actions))
        if effect.kind == "write":
            # echo semantics: written lines end with a newline
            art.content = (effect.content or "") + "\n"
        elif effect.kind == "append":
            if art.content is None:
                pass  # appending to opaque content keeps it opaque
            else:
                art.content = art.content + (effect.content or "") + "\n"
        elif effect.kind == "strip_prefix" and effect.prefix is not None:
            if art.content is not None:
                art.content = "\n".join(
                    line[len(effect.prefix):] if line.startswith(effect.prefix) else line
                    for line in art.content.split("\n")
                )
        elif effect.kind == "chmod_exec":
            art.executable = True
        else:
            art.content = None  # opaque write: content no longer known

    def reconstruct_payloads(self, path: str, force_decode: bool = False) -> list[str]:
        """Candidate latent payloads for one artifact (raw + decode chain)."""
        art = self.artifacts.get(path)
        if art is None or art.content is None:
            return []
        return _decode_candidates(art.content)

    def referenced_artifacts(self, content: str) -> list[str]:
        """Session artifacts whose names appear inside script content."""
        hits = []
        for path in self.artifacts:
            name = posixpath.basename(path)
            if name and (name in content or path in content):
                hits.append(path)
        return hits


def analyze_chain(trace: SessionTrace, command: str,
                  provenance: Optional[set[str]] = None) -> Optional[ChainFinding]:
    """Update the trace with the command's effects; flag staged execution chains."""
    provenance = provenance or {"user"}
    classified = classify_command(command, cwd=trace.cwd)

    finding: Optional[ChainFinding] = None

    # living-off-the-land: dual-use utility consuming externally tainted input
    if finding is None:
        try:
            tokens = shlex.split(command, posix=True)
        except ValueError:
            tokens = []
        binaries = {t for t in tokens if t in DUAL_USE_BINARIES}
        if binaries:
            for path in classified.consumed_artifacts:
                art = trace.artifact(path)
                if art is not None and "external" in art.taint:
                    finding = ChainFinding(
                        kind=ChainFindingKind.LIVING_OFF_THE_LAND,
                        artifact=path, payload=art.content or "",
                    )
                    break

    # invocation checks: signature reconstruction first (most specific)
    if finding is None:
        for inv in classified.invocations:
            candidates: list[tuple[str, str]] = []
            for payload in trace.reconstruct_payloads(inv.path):
                candidates.append((inv.path, payload))
            inv_art = trace.artifact(inv.path)
            if inv_art is not None and inv_art.content is not None:
                for ref in trace.referenced_artifacts(inv_art.content):
                    if ref != inv.path:
                        for payload in trace.reconstruct_payloads(ref):
                            candidates.append((ref, payload))
            for artifact_path, payload in candidates:
                sig = match_signature(payload)
                if sig is not None:
                    finding = ChainFinding(
                        kind=ChainFindingKind.STAGED_PAYLOAD,
                        artifact=artifact_path, payload=payload, signature=sig,
                    )
                    break
            if finding:
                break

    if finding is None:
        for inv in classified.invocations:
            art = trace.artifact(inv.path)
            if art is not None and art.writer_actions:
                finding = ChainFinding(
                    kind=ChainFindingKind.WRITE_THEN_INVOKE,
                    artifact=inv.path, payload=art.content or "",
                )
                break

    # a flagged command is denied upstream and never executes, so its
    # effects must not enter the trace
    if finding is not None:
        return finding

    payload_digests = []
    for effect in classified.effects:
        trace._apply_effect(effect, provenance)
        art = trace.artifact(effect.path)
        if art and art.content is not None:
            payload_digests.append(sha256_hex(art.content.encode("utf-8")))
    trace.actions.append(ExecutedAction(
        command=command,
        triples=classified.triples,
        artifacts=tuple(e.path for e in classified.effects),
        payload_digests=tuple(payload_digests),
    ))
    return None


# ---------------------------------------------------------------------------
# Resource monitoring and transactional execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceBudget:
    max_processes: int = 16
    max_cpu_share: float = 0.8
    max_memory_bytes: int = 256 * 1024 * 1024
    sample_interval: float = 0.05
    timeout: float = 10.0


@dataclass
class MonitorReport:
    breached: bool = False
    dimension: str = ""
    evidence: str = ""
    samples: int = 0


def monitor_resources(proc: psutil.Process, budget: ResourceBudget,
                      stop: threading.Event, report: MonitorReport,
                      on_breach=None) -> None:
    """Sample the process tree; two consecutive over-budget samples = breach."""
    over_streak: dict[str, int] = {"processes": 0, "cpu": 0, "memory": 0}
    try:
        proc.cpu_percent(None)  # prime the cpu counter
    except psutil.Error:
        return
    while not stop.wait(budget.sample_interval):
        report.samples += 1
        try:
            children = proc.children(recursive=True)
            n_procs = 1 + len(children)
            cpu = proc.cpu_percent(None) / 100.0
            mem = proc.memory_info().rss
            for child in children:
                try:
                    cpu += child.cpu_percent(None) / 100.0
                    mem += child.memory_info().rss
                except psutil.Error:
                    continue
        except psutil.Error:
            return  # process exited
        observations = {
            "processes": (n_procs, budget.max_processes),
            "cpu": (cpu, budget.max_cpu_share),
            "memory": (mem, budget.max_memory_bytes),
        }
        for dim, (value, limit) in observations.items():
            if value > limit:
                over_streak[dim] += 1
            else:
                over_streak[dim] = 0
            if over_streak[dim] >= 2:
                report.breached = True
                report.dimension = dim
                report.evidence = f"{dim}={value} exceeded budget {limit} twice"
                if on_breach:
                    on_breach()
                return


def _kill_tree(proc: psutil.Process) -> None:
    try:
        for child in proc.children(recursive=True):
            try:
                child.kill()
            except psutil.Error:
                pass
        proc.kill()
    except psutil.Error:
        pass


def tree_digest(root: Path) -> str:
    """Order-independent digest of a directory tree's paths and contents."""
    entries = []
    for path in sorted(root.rglob("*")):
        rel = str(path.relative_to(root))
        if path.is_file():
            entries.append(f"{rel}:{sha256_hex(path.read_bytes())}")
        elif path.is_dir():
            entries.append(f"{rel}/")
    return sha256_hex("\n".join(entries).encode("utf-8"))


class RolledBack(ExecguardError):
    def __init__(self, reason: str, evidence: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.evidence = evidence


class Timeout(ExecguardError):
    pass


@dataclass
class ExecutionResult:
    committed: bool
    stdout: str
    stderr: str
    returncode: int


def execute_transactional(command: str, workspace: Path,
                          declared_writes: Optional[list[str]] = None,
                          budget: Optional[ResourceBudget] = None) -> ExecutionResult:
    """Run one step in a discardable overlay; commit only clean outcomes.

    The workspace is copied to an overlay, the command runs there under the
    resource monitor, and on success the overlay replaces the workspace via
    atomic renames. Monitor breaches, timeouts, and writes outside the
    declared patterns discard the overlay, leaving the workspace bit-exact.
    """
    budget = budget or ResourceBudget()
    workspace = workspace.resolve()
    # sibling overlay keeps the commit renames on one filesystem
    overlay = Path(tempfile.mkdtemp(prefix=".overlay-", dir=workspace.parent))
    overlay_ws = overlay / "ws"
    shutil.copytree(workspace, overlay_ws)
    pre_files = {
        str(p.relative_to(overlay_ws)): sha256_hex(p.read_bytes())
        for p in overlay_ws.rglob("*") if p.is_file()
    }

    stop = threading.Event()
    report = MonitorReport()
    try:
        proc = subprocess.Popen(
            ["bash", "-c", command], cwd=str(overlay_ws),
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
            start_new_session=True,
        )
        ps_proc = psutil.Process(proc.pid)
        monitor = threading.Thread(
            target=monitor_resources,
            args=(ps_proc, budget, stop, report),
            kwargs={"on_breach": lambda: _kill_tree(ps_proc)},
            daemon=True,
        )
        monitor.start()
        try:
            stdout, stderr = proc.communicate(timeout=budget.timeout)
        except subprocess.TimeoutExpired:
            _kill_tree(ps_proc)
            proc.wait()
            raise Timeout(f"step exceeded {budget.timeout}s")
        finally:
            stop.set()
            monitor.join(timeout=2.0)

        if report.breached:
            raise RolledBack("resource budget breached", report.evidence)

        # undeclared-write detection over the overlay diff
        declared = [Resource.parse(w) for w in (declared_writes or [])]
        post_files = {
            str(p.relative_to(overlay_ws)): sha256_hex(p.read_bytes())
            for p in overlay_ws.rglob("*") if p.is_file()
        }
        changed = [
            rel for rel in set(pre_files) | set(post_files)
            if pre_files.get(rel) != post_files.get(rel)
        ]
        for rel in changed:
            target = Resource(Domain.FILESYSTEM, posixpath.join(str(workspace), rel))
            if not any(d.covers(target) for d in declared):
                raise RolledBack(
                    "undeclared write detected",
                    f"{target.pattern} not within declared writes {declared_writes}",
                )

        # commit: atomic rename swap
        backup = workspace.with_name(workspace.name + ".committing")
        os.rename(workspace, backup)
        os.rename(overlay_ws, workspace)
        shutil.rmtree(backup)
        return ExecutionResult(committed=True, stdout=stdout, stderr=stderr,
                               returncode=proc.returncode)
    finally:
        shutil.rmtree(overlay, ignore_errors=True)


# ---------------------------------------------------------------------------
# Pending-action queue (HITL)
# ---------------------------------------------------------------------------

class PendingState(Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"
    EXPIRED = "expired"


@dataclass(frozen=True)
class PendingAction:
    id: str
    step: dict[str, Any]
    risk: float
    provenance: dict[str, Any]
    state: PendingState
    created_at: int
    deadline: int
    decided_by: Optional[str] = None

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "step": self.step,
            "risk": self.risk,
            "provenance": self.provenance,
            "state": self.state.value,
            "created_at": self.created_at,
            "deadline": self.deadline,
            "decided_by": self.decided_by,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "PendingAction":
        return cls(
            id=rec["id"], step=rec["step"], risk=rec["risk"],
            provenance=rec["provenance"], state=PendingState(rec["state"]),
            created_at=rec["created_at"], deadline=rec["deadline"],
            decided_by=rec.get("decided_by"),
        )


class PendingQueue:
    """Escalated actions awaiting a human decision; expiry behaves as a deny."""

    def __init__(self, path: Optional[str | Path] = None):
        self._items: dict[str, PendingAction] = {}
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._path = Path(path) if path else None
        if self._path and self._path.exists():
            for line in self._path.read_text("utf-8").splitlines():
                if line.strip():
                    item = PendingAction.from_record(json.loads(line))
                    self._items[item.id] = item

    def _persist(self) -> None:
        if not self._path:
            return
        lines = [json.dumps(i.to_record(), sort_keys=True) for i in self._items.values()]
        self._path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")

    def escalate(self, step: dict[str, Any], risk: float, provenance: dict[str, Any],
                 created_at: int, deadline_ms: int) -> PendingAction:
        with self._lock:
            # deterministic id: queue ordinal + content digest (reproducible replays)
            digest = sha256_hex(json.dumps([step, created_at], sort_keys=True).encode())[:8]
            action = PendingAction(
                id=f"pa{len(self._items):04d}-{digest}", step=step, risk=risk,
                provenance=provenance,
                state=PendingState.PENDING, created_at=created_at,
                deadline=created_at + deadline_ms,
            )
            self._items[action.id] = action
            self._persist()
            return action

    def resolve(self, action_id: str, decision: str, reviewer: str) -> PendingAction:
        if decision not in ("approve", "deny"):
            raise ValueError(f"decision must be approve or deny, got {decision!r}")
        with self._lock:
            item = self._items.get(action_id)
            if item is None:
                raise UnknownPending(action_id)
            if item.state is not PendingState.PENDING:
                raise AlreadyDecided(f"{action_id} already {item.state.value}")
            new_state = PendingState.APPROVED if decision == "approve" else PendingState.DENIED
            updated = replace(item, state=new_state, decided_by=reviewer)
            self._items[action_id] = updated
            self._persist()
            self._cond.notify_all()
            return updated

    def expire_due(self, now: int) -> list[PendingAction]:
        with self._lock:
            expired = []
            for action_id, item in list(self._items.items()):
                if item.state is PendingState.PENDING and now >= item.deadline:
                    updated = replace(item, state=PendingState.EXPIRED)
                    self._items[action_id] = updated
                    expired.append(updated)
            if expired:
                self._persist()
                self._cond.notify_all()
            return expired

    def get(self, action_id: str) -> PendingAction:
        with self._lock:
            item = self._items.get(action_id)
            if item is None:
                raise UnknownPending(action_id)
            return item

    def list_all(self) -> list[PendingAction]:
        with self._lock:
            return sorted(self._items.values(), key=lambda i: i.created_at)

    def wait_for_decision(self, action_id: str, timeout: Optional[float] = None) -> PendingAction:
        """Block until the action leaves Pending (resolution or expiry)."""
        deadline = time.monotonic() + timeout if timeout is not None else None
        with self._cond:
            while True:
                item = self._items.get(action_id)
                if item is None:
                    raise UnknownPending(action_id)
                if item.state is not PendingState.PENDING:
                    return item
                remaining = None
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return item
                self._cond.wait(timeout=remaining if remaining is not None else 0.5)


# ---------------------------------------------------------------------------
# Risk scoring
# ---------------------------------------------------------------------------

RISK_ESCALATE_BAND = (0.5, 0.8)


def compute_risk(irreversible_fraction: float, privilege_breadth: float,
                 alignment_deficit: float) -> float:
    """Weighted risk: irreversibility 0.4, privilege breadth 0.3, alignment 0.3."""
    score = (0.4 * irreversible_fraction
             + 0.3 * privilege_breadth
             + 0.3 * alignment_deficit)
    return max(0.0, min(1.0, score))
