"""Inference-stage defenses: validated memory, Merkle checkpoints, drift detection.

Writes pass a three-part alignment filter (tier gate on rules, sleeper
pattern match, contradiction check against higher-tier entries) before they
reach the store; denied entries land in a quarantine journal and never touch
the Merkle state. Snapshots are deterministic Merkle roots over the entry
prefix, giving bit-exact verification and rollback. Drift is cosine
similarity between unit term-frequency vectors (the documented stand-in for
the cross-encoder the architecture leaves pluggable).
"""

from __future__ import annotations

import json
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional

from agentgate.core import (
    Decision,
    Layer,
    TrustTier,
    Verdict,
    allow,
    canonical_record,
    deny,
    sha256_hex,
)

T_DRIFT_DEFAULT = 0.6

EMPTY_ROOT_SENTINEL = b"MEMGUARD_EMPTY"


class MemguardError(Exception):
    pass


class UnknownCheckpoint(MemguardError):
    """Rollback target was not produced by this store."""


class TenantIsolation(MemguardError):
    """Cross-namespace access attempt."""


class EntryKind:
    FACT = "fact"
    PREFERENCE = "preference"
    RULE = "rule"

    ALL = (FACT, PREFERENCE, RULE)


@dataclass(frozen=True)
class MemoryEntry:
    id: int
    content: str
    tier: TrustTier
    kind: str
    created_at: int

    def __post_init__(self) -> None:
        if self.kind not in EntryKind.ALL:
            raise ValueError(f"unknown entry kind {self.kind!r}")

    def leaf_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "content": self.content,
            "tier": int(self.tier),
            "kind": self.kind,
        }

    def to_record(self) -> dict[str, Any]:
        rec = self.leaf_record()
        rec["created_at"] = self.created_at
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "MemoryEntry":
        return cls(
            id=rec["id"],
            content=rec["content"],
            tier=TrustTier(rec["tier"]),
            kind=rec["kind"],
            created_at=rec["created_at"],
        )


@dataclass(frozen=True)
class Checkpoint:
    root: str
    entry_count: int
    created_at: int
    label: str

    def to_record(self) -> dict[str, Any]:
        return {
            "root": self.root,
            "entry_count": self.entry_count,
            "created_at": self.created_at,
            "label": self.label,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Checkpoint":
        return cls(root=rec["root"], entry_count=rec["entry_count"],
                   created_at=rec["created_at"], label=rec["label"])


# ---------------------------------------------------------------------------
# Term-frequency similarity
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def tf_vector(text: str) -> dict[str, float]:
    """Unit-L2-normalized term-frequency vector; empty text gives the zero vector."""
    counts = Counter(tokenize(text))
    norm = math.sqrt(sum(c * c for c in counts.values()))
    if norm == 0:
        return {}
    return {t: c / norm for t, c in counts.items()}


def cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    dot = sum(v * b.get(t, 0.0) for t, v in a.items())
    return max(0.0, min(1.0, dot))


@dataclass(frozen=True)
class FrozenObjective:
    """Immutable representation of the original task the agent was given."""

    text: str
    vector: dict[str, float] = field(default_factory=dict, compare=False)

    @classmethod
    def from_text(cls, text: str) -> "FrozenObjective":
        return cls(text=text, vector=tf_vector(text))


def drift_score(context: str, objective: FrozenObjective) -> float:
    """Similarity of the working context to the frozen objective, in [0, 1]."""
    return cosine(tf_vector(context), objective.vector)


# ---------------------------------------------------------------------------
# Write validation
# ---------------------------------------------------------------------------

_SLEEPER_PATTERNS = [
    re.compile(p, re.IGNORECASE)
    for p in (
        r"\b(refuse|reject|deny|block)\b[^.]{0,40}\b(any|all|every|future)\b[^.]{0,40}\b(quer(y|ies)|requests?|prompts?|tasks?)\b",
        r"\bfrom\s+now\s+on\b",
        r"\balways\s+(respond|reply|answer|refuse|reject)\b",
        r"\bnever\s+(answer|comply|complete|respond)\b",
        r"\b(ignore|disregard)\b[^.]{0,30}\b(previous|future|user)\b[^.]{0,20}\b(instructions?|requests?)\b",
        r"\binstead\s+(reply|respond|output|say)\b",
    )
]

_IS_STATEMENT = re.compile(r"^(?P<subject>.+?)\s+(?:is|are)\s+(?P<negation>not\s+)?(?P<value>.+?)\s*\.?$",
                           re.IGNORECASE)


def _load_contradiction_data() -> dict[str, Any]:
    with resources.files("agentgate.data").joinpath("contradictions.json").open("r") as fh:
        return json.load(fh)


_CONTRA = _load_contradiction_data()
_ANTONYMS: set[frozenset[str]] = {frozenset(pair) for pair in _CONTRA["antonyms"]}
_CATEGORIES: dict[str, set[str]] = {k: set(v) for k, v in _CONTRA["categories"].items()}

_PROHIBITION = re.compile(
    r"^(?P<subject>.+?)\s+(?:is|are)\s+(forbidden|prohibited|not\s+allowed|not\s+permitted)\b",
    re.IGNORECASE,
)


def sleeper_match(content: str) -> Optional[str]:
    for pat in _SLEEPER_PATTERNS:
        m = pat.search(content)
        if m:
            return m.group(0)
    return None


def _parse_is_statement(text: str) -> Optional[tuple[str, bool, str]]:
    m = _IS_STATEMENT.match(text.strip())
    if not m:
        return None
    subject = " ".join(tokenize(m.group("subject")))
    value = " ".join(tokenize(m.group("value")))
    return subject, m.group("negation") is not None, value


def contradicts(new_content: str, existing_content: str) -> bool:
    """Negation-pair / antonym check, plus category prohibitions.

    `<subject> is <X>` contradicts `<subject> is not <X>` and
    `<subject> is <antonym(X)>`. A higher-tier prohibition of the form
    `<category terms> are forbidden` contradicts new content mentioning
    terms of a known category named by the subject.
    """
    a = _parse_is_statement(new_content)
    b = _parse_is_statement(existing_content)
    if a and b and a[0] == b[0]:
        _, neg_a, val_a = a
        _, neg_b, val_b = b
        if val_a == val_b and neg_a != neg_b:
            return True
        if not neg_a and not neg_b and frozenset((val_a, val_b)) in _ANTONYMS:
            return True
    m = _PROHIBITION.match(existing_content.strip())
    if m:
        subject_tokens = set(tokenize(m.group("subject")))
        for category, terms in _CATEGORIES.items():
            if category in subject_tokens:
                if set(tokenize(new_content)) & terms:
                    return True
    return False


def validate_write(entry: MemoryEntry, store: "MemoryStore",
                   objective: Optional[FrozenObjective] = None) -> Verdict:
    """Alignment filter for memory writes; every violated branch is reported."""
    violations: list[str] = []
    if entry.kind == EntryKind.RULE and entry.tier < TrustTier.USER:
        violations.append(f"rule entries require tier >= user; got {entry.tier.name.lower()}")
    hit = sleeper_match(entry.content)
    if hit:
        violations.append(f"sleeper instruction pattern: {hit!r}")
    for existing in store.entries():
        if existing.tier > entry.tier and contradicts(entry.content, existing.content):
            violations.append(
                f"contradicts higher-tier entry {existing.id}: {existing.content[:60]!r}"
            )
            break
    if violations:
        return deny(Layer.COGNITIVE, "; ".join(violations))
    return allow(Layer.COGNITIVE, "memory write validated")


# ---------------------------------------------------------------------------
# Merkle snapshots
# ---------------------------------------------------------------------------

def leaf_hash(entry: MemoryEntry) -> bytes:
    return bytes.fromhex(sha256_hex(canonical_record(entry.leaf_record())))


def merkle_root(entries: list[MemoryEntry]) -> str:
    """Root over id-sorted entries; odd levels duplicate the last node."""
    if not entries:
        return sha256_hex(EMPTY_ROOT_SENTINEL)
    level = [leaf_hash(e) for e in sorted(entries, key=lambda e: e.id)]
    import hashlib
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [
            hashlib.sha256(level[i] + level[i + 1]).digest()
            for i in range(0, len(level), 2)
        ]
    return level[0].hex()


class MemoryStore:
    """Single-writer validated memory for one tenant namespace."""

    def __init__(self, tenant: str = "default", path: Optional[str | Path] = None):
        self.tenant = tenant
        self._entries: list[MemoryEntry] = []
        self._quarantine: list[tuple[MemoryEntry, str]] = []
        self._checkpoints: dict[str, Checkpoint] = {}
        self._next_id = 0
        self._lock = threading.Lock()
        self._path = Path(path) if path else None
        if self._path and self._path.exists():
            self._load()

    # -- persistence -----------------------------------------------------

    def _load(self) -> None:
        assert self._path is not None
        for line in self._path.read_text("utf-8").splitlines():
            if line.strip():
                self._entries.append(MemoryEntry.from_record(json.loads(line)))
        if self._entries:
            self._next_id = max(e.id for e in self._entries) + 1
        index = self._index_path()
        if index and index.exists():
            for line in index.read_text("utf-8").splitlines():
                if line.strip():
                    cp = Checkpoint.from_record(json.loads(line))
                    self._checkpoints[cp.label] = cp

    def _index_path(self) -> Optional[Path]:
        return self._path.with_suffix(".checkpoints") if self._path else None

    def _persist(self) -> None:
        if not self._path:
            return
        lines = [canonical_record(e.to_record()).decode("utf-8") for e in self._entries]
        self._path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")
        index = self._index_path()
        cps = [canonical_record(c.to_record()).decode("utf-8") for c in self._checkpoints.values()]
        index.write_text("\n".join(cps) + ("\n" if cps else ""), "utf-8")

    # -- reads -----------------------------------------------------------

    def entries(self) -> list[MemoryEntry]:
        return list(self._entries)

    def rules(self) -> list[MemoryEntry]:
        return [e for e in self._entries if e.kind == EntryKind.RULE]

    def quarantine_journal(self) -> list[tuple[MemoryEntry, str]]:
        return list(self._quarantine)

    def root(self) -> str:
        return merkle_root(self._entries)

    # -- writes ----------------------------------------------------------

    def write(self, content: str, tier: TrustTier, kind: str, created_at: int,
              objective: Optional[FrozenObjective] = None) -> tuple[Verdict, Optional[MemoryEntry]]:
        """Validate-then-commit; a Deny quarantines the candidate entry."""
        with self._lock:
            candidate = MemoryEntry(id=self._next_id, content=content, tier=tier,
                                    kind=kind, created_at=created_at)
            verdict = validate_write(candidate, self, objective)
            if verdict.decision is not Decision.ALLOW:
                self._quarantine.append((candidate, verdict.reason))
                return verdict, None
            self._entries.append(candidate)
            self._next_id += 1
            self._persist()
            return verdict, candidate

    def force_write(self, content: str, tier: TrustTier, kind: str,
                    created_at: int) -> MemoryEntry:
        """Unvalidated commit; only for runs with the cognitive layer disabled."""
        with self._lock:
            entry = MemoryEntry(id=self._next_id, content=content, tier=tier,
                                kind=kind, created_at=created_at)
            self._entries.append(entry)
            self._next_id += 1
            self._persist()
            return entry

    def snapshot(self, label: str, created_at: int) -> Checkpoint:
        with self._lock:
            cp = Checkpoint(root=merkle_root(self._entries),
                            entry_count=len(self._entries),
                            created_at=created_at, label=label)
            self._checkpoints[label] = cp
            self._persist()
            return cp

    def verify(self, cp: Checkpoint) -> bool:
        prefix = [e for e in self._entries if e.id < cp.entry_count]
        return merkle_root(prefix) == cp.root and len(prefix) == cp.entry_count

    def rollback(self, cp: Checkpoint) -> None:
        """Restore the checkpointed prefix; removed entries join the journal."""
        with self._lock:
            known = self._checkpoints.get(cp.label)
            if known is None or known != cp:
                raise UnknownCheckpoint(cp.label)
            keep = [e for e in self._entries if e.id < cp.entry_count]
            if merkle_root(keep) != cp.root:
                raise UnknownCheckpoint(f"{cp.label}: prefix does not recompute")
            removed = self._entries[len(keep):]
            for entry in removed:
                self._quarantine.append((entry, f"rolled back to {cp.label}"))
            self._entries = keep
            self._next_id = cp.entry_count
            self._persist()


class MemoryVault:
    """Tenant-namespaced stores; cross-namespace reads are denied outright."""

    def __init__(self, base_path: Optional[str | Path] = None):
        self._stores: dict[str, MemoryStore] = {}
        self._base = Path(base_path) if base_path else None
        self._lock = threading.Lock()

    def store_for(self, tenant: str, caller_tenant: Optional[str] = None) -> MemoryStore:
        if caller_tenant is not None and caller_tenant != tenant:
            raise TenantIsolation(f"tenant {caller_tenant!r} cannot access {tenant!r}")
        with self._lock:
            if tenant not in self._stores:
                path = self._base / f"{tenant}.mem" if self._base else None
                self._stores[tenant] = MemoryStore(tenant=tenant, path=path)
            return self._stores[tenant]
