"""Shared domain types: trust tiers, tagged content, verdicts, and the audit chain.

Every layer of the gateway speaks these types. Serialization is canonical
(UTF-8 JSON, key-sorted, compact separators) so that hashes reproduce
byte-exactly across processes and implementations; the exact field layouts
are documented in the README.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any, Iterable, Optional


GENESIS_HASH = "0" * 64  # hex of 32 zero bytes


class TrustTier(IntEnum):
    """Provenance-derived privilege level. Higher value = more trusted."""

    EXTERNAL = 0
    VETTED = 1
    USER = 2
    SYSTEM = 3


def combine_tiers(a: TrustTier, b: TrustTier) -> TrustTier:
    """Combine two tiers; derived content never escalates above either parent."""
    return TrustTier(min(int(a), int(b)))


def combine_all(tiers: Iterable[TrustTier]) -> TrustTier:
    result = TrustTier.SYSTEM
    for t in tiers:
        result = combine_tiers(result, t)
    return result


class Decision(Enum):
    ALLOW = "allow"
    SANITIZE = "sanitize"
    QUARANTINE = "quarantine"
    ESCALATE = "escalate"
    DENY = "deny"


# Severity order used when composing layer checks: most severe wins.
SEVERITY = {
    Decision.ALLOW: 0,
    Decision.SANITIZE: 1,
    Decision.QUARANTINE: 2,
    Decision.ESCALATE: 3,
    Decision.DENY: 4,
}


class Layer(Enum):
    FOUNDATION = "foundation"
    INPUT = "input"
    COGNITIVE = "cognitive"
    DECISION = "decision"
    EXECUTION = "execution"


ALL_LAYERS = (
    Layer.FOUNDATION,
    Layer.INPUT,
    Layer.COGNITIVE,
    Layer.DECISION,
    Layer.EXECUTION,
)


class CoreError(Exception):
    """Base class for gateway domain errors."""


class ChainCorrupt(CoreError):
    """The audit chain failed verification before an append."""


def canonical_record(payload: dict[str, Any]) -> bytes:
    """Canonical line format: key-sorted compact JSON, UTF-8."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def record_digest(payload: dict[str, Any]) -> str:
    return sha256_hex(canonical_record(payload))


@dataclass(frozen=True)
class Origin:
    """Where a piece of content came from: channel + locator within it."""

    channel: str  # e.g. "user", "retrieval", "tool", "system"
    locator: str  # e.g. a URL, file path, or tool name

    def to_record(self) -> dict[str, Any]:
        return {"channel": self.channel, "locator": self.locator}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Origin":
        return cls(channel=rec["channel"], locator=rec["locator"])


@dataclass(frozen=True)
class TaggedSegment:
    """A unit of content with immutable provenance tier.

    `directive_score` starts unset; the input firewall fills it in via
    `with_score`, which is the only sanctioned mutation (returns a copy).
    """

    id: str
    content: str
    tier: TrustTier
    origin: Origin
    directive_score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.directive_score is not None and not (0.0 <= self.directive_score <= 1.0):
            raise ValueError(f"directive_score out of range: {self.directive_score}")

    def with_score(self, score: float) -> "TaggedSegment":
        return replace(self, directive_score=score)

    def derive(self, new_id: str, content: str, other_tiers: Iterable[TrustTier] = ()) -> "TaggedSegment":
        """Derived segments take the minimum of all parent tiers."""
        tier = combine_all([self.tier, *other_tiers])
        return TaggedSegment(id=new_id, content=content, tier=tier, origin=self.origin)

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "content": self.content,
            "tier": int(self.tier),
            "origin": self.origin.to_record(),
            "directive_score": self.directive_score,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "TaggedSegment":
        return cls(
            id=rec["id"],
            content=rec["content"],
            tier=TrustTier(rec["tier"]),
            origin=Origin.from_record(rec["origin"]),
            directive_score=rec.get("directive_score"),
        )


@dataclass(frozen=True)
class Verdict:
    """A layer's decision about one subject, with graduated severity."""

    decision: Decision
    layer: Layer
    reason: str
    risk: float = 0.0

    def __post_init__(self) -> None:
        if self.decision in (Decision.DENY, Decision.QUARANTINE) and not self.reason:
            raise ValueError(f"{self.decision.value} verdicts require a non-empty reason")
        if not (0.0 <= self.risk <= 1.0):
            raise ValueError(f"risk out of range: {self.risk}")

    @property
    def blocking(self) -> bool:
        return self.decision is not Decision.ALLOW

    def to_record(self) -> dict[str, Any]:
        return {
            "decision": self.decision.value,
            "layer": self.layer.value,
            "reason": self.reason,
            "risk": self.risk,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Verdict":
        return cls(
            decision=Decision(rec["decision"]),
            layer=Layer(rec["layer"]),
            reason=rec["reason"],
            risk=rec["risk"],
        )


def allow(layer: Layer, reason: str = "ok", risk: float = 0.0) -> Verdict:
    return Verdict(Decision.ALLOW, layer, reason, risk)


def deny(layer: Layer, reason: str, risk: float = 1.0) -> Verdict:
    return Verdict(Decision.DENY, layer, reason, risk)


def most_severe(verdicts: Iterable[Verdict]) -> Verdict:
    """Pick the most severe verdict; ties resolve to the earliest."""
    ordered = list(verdicts)
    if not ordered:
        raise ValueError("most_severe requires at least one verdict")
    return max(ordered, key=lambda v: SEVERITY[v.decision])


@dataclass(frozen=True)
class AuditEvent:
    """One link of the tamper-evident decision log.

    this_hash = sha256(canonical JSON of {layer, prev_hash, seq, subject,
    timestamp, verdict}); the genesis event links to 32 zero bytes.
    """

    seq: int
    timestamp: int  # epoch milliseconds
    layer: Layer
    subject: str
    verdict: Verdict
    prev_hash: str
    this_hash: str

    @staticmethod
    def compute_hash(seq: int, timestamp: int, layer: Layer, subject: str,
                     verdict: Verdict, prev_hash: str) -> str:
        body = {
            "seq": seq,
            "timestamp": timestamp,
            "layer": layer.value,
            "subject": subject,
            "verdict": verdict.to_record(),
            "prev_hash": prev_hash,
        }
        return record_digest(body)

    def recompute_hash(self) -> str:
        return self.compute_hash(self.seq, self.timestamp, self.layer,
                                 self.subject, self.verdict, self.prev_hash)

    def to_record(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "layer": self.layer.value,
            "subject": self.subject,
            "verdict": self.verdict.to_record(),
            "prev_hash": self.prev_hash,
            "this_hash": self.this_hash,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "AuditEvent":
        return cls(
            seq=rec["seq"],
            timestamp=rec["timestamp"],
            layer=Layer(rec["layer"]),
            subject=rec["subject"],
            verdict=Verdict.from_record(rec["verdict"]),
            prev_hash=rec["prev_hash"],
            this_hash=rec["this_hash"],
        )


class AuditChain:
    """Append-only, single-writer hash chain of layer verdicts.

    Appends are serialized under a lock; reads return list snapshots. An
    optional sink path persists one canonical record per line.
    """

    def __init__(self, sink_path: Optional[str] = None):
        self._events: list[AuditEvent] = []
        self._lock = threading.Lock()
        self._sink_path = sink_path

    def __len__(self) -> int:
        return len(self._events)

    @property
    def events(self) -> list[AuditEvent]:
        return list(self._events)

    def last_hash(self) -> str:
        return self._events[-1].this_hash if self._events else GENESIS_HASH

    def append(self, layer: Layer, subject: str, verdict: Verdict,
               timestamp: int) -> AuditEvent:
        with self._lock:
            if not self._verify_locked():
                raise ChainCorrupt("audit chain failed verification; refusing to append")
            seq = len(self._events)
            prev_hash = self.last_hash()
            this_hash = AuditEvent.compute_hash(seq, timestamp, layer, subject, verdict, prev_hash)
            event = AuditEvent(seq=seq, timestamp=timestamp, layer=layer, subject=subject,
                               verdict=verdict, prev_hash=prev_hash, this_hash=this_hash)
            self._events.append(event)
            if self._sink_path:
                with open(self._sink_path, "ab") as fh:
                    fh.write(canonical_record(event.to_record()) + b"\n")
            return event

    def _verify_locked(self) -> bool:
        prev = GENESIS_HASH
        for i, ev in enumerate(self._events):
            if ev.seq != i or ev.prev_hash != prev or ev.recompute_hash() != ev.this_hash:
                return False
            prev = ev.this_hash
        return True

    def verify(self) -> bool:
        with self._lock:
            return self._verify_locked()

    @classmethod
    def load(cls, path: str) -> "AuditChain":
        chain = cls(sink_path=path)
        try:
            with open(path, "rb") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        chain._events.append(AuditEvent.from_record(json.loads(line)))
        except FileNotFoundError:
            pass
        return chain


def verify_events(events: list[AuditEvent]) -> bool:
    """Verify a standalone event list (e.g. a replay transcript or loaded file)."""
    prev = GENESIS_HASH
    for i, ev in enumerate(events):
        if ev.seq != i or ev.prev_hash != prev or ev.recompute_hash() != ev.this_hash:
            return False
        prev = ev.this_hash
    return True
