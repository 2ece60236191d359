"""Input-stage defenses: segmentation, directive-intent scoring, hierarchy, response.

Retrieved content is split into provenance-tagged segments which are scored
for directive intent by a deterministic linear heuristic (a documented
stand-in for a classifier model; swap in another scorer via the
DirectiveScorer protocol). The graduated response leaves clean documents
untouched, redacts mid-score segments in place, and quarantines documents
whose worst segment crosses the upper threshold.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from agentgate.core import (
    Decision,
    Layer,
    Origin,
    TaggedSegment,
    TrustTier,
    Verdict,
    allow,
    sha256_hex,
)

T_SANITIZE_DEFAULT = 0.5
T_QUARANTINE_DEFAULT = 0.8

REDACTION_PLACEHOLDER = "[REDACTED:inputguard]"

_CHANNEL_TIERS = {
    "system": TrustTier.SYSTEM,
    "user": TrustTier.USER,
    "skill": TrustTier.VETTED,
}


class EncodingError(ValueError):
    """Document is not valid UTF-8 text."""


@dataclass(frozen=True)
class SegmentedDocument:
    source: Origin
    segments: tuple[TaggedSegment, ...]

    def reassemble(self) -> str:
        return "".join(seg.content for seg in self.segments)


@dataclass(frozen=True)
class FirewallReport:
    document: Origin
    per_segment: tuple[tuple[str, float, tuple[str, ...]], ...]  # (id, score, patterns)
    max_score: float
    verdict: Verdict


class DirectiveScorer(Protocol):
    def score(self, text: str) -> tuple[float, tuple[str, ...]]: ...


_IMPERATIVE_VERBS = (
    "ignore", "disregard", "forget", "output", "print", "respond", "reply",
    "write", "execute", "run", "delete", "remove", "send", "reveal", "show",
    "stop", "override", "follow", "visit", "enter", "click",
)
_SENTENCE_SPLIT = re.compile(r"[.!?\n:]+\s*")

_SECOND_PERSON = re.compile(
    r"\byou\s+(must|should|are\s+required|will|need\s+to|have\s+to)\b|\byour\s+(task|job|goal|instructions?|new\s+task)\b",
    re.IGNORECASE,
)
_OUTPUT_FORCING = re.compile(
    r"\b(output|print|respond|reply|answer|say)\b[^.!?\n]{0,40}\bexactly\b"
    r"|\bonly\s+(output|print|respond|reply)\b"
    r"|\band\s+nothing\s+else\b"
    r"|\b(reveal|print|show|repeat)\b[^.!?\n]{0,30}\bsystem\s+prompt\b",
    re.IGNORECASE,
)
_TOOL_TOKEN = re.compile(
    r"tool_use|function_call|invoke_tool|<tool\b|\btool\s*:\s*\w+", re.IGNORECASE
)
_TASK_OVERRIDE = re.compile(
    r"\b(ignore|disregard|forget)\b[^.!?\n]{0,30}\b(previous|above|prior|earlier|all)\s+(instructions?|prompts?|messages?|rules?)\b"
    r"|\bnew\s+instructions?\s*:"
    r"|\boverride\s+the\s+user\b"
    r"|\binstead\s+of\s+(completing|performing|your)\b",
    re.IGNORECASE,
)
_ROLE_IMPERSONATION = re.compile(
    r"^\s*(system|assistant|developer)\s*:|\[(system|assistant)\]|\bas\s+your\s+(administrator|developer|operator)\b",
    re.IGNORECASE | re.MULTILINE,
)


class HeuristicDirectiveScorer:
    """Linear feature scorer; weights are fixed and sum to 1.0."""

    WEIGHTS = {
        "imperative_lead": 0.25,
        "second_person": 0.15,
        "output_forcing": 0.25,
        "task_override": 0.25,
        "tool_token": 0.05,
        "role_impersonation": 0.05,
    }

    def score(self, text: str) -> tuple[float, tuple[str, ...]]:
        if not text.strip():
            return 0.0, ()
        matched: list[str] = []
        lowered = text.strip()
        sentences = [s.strip() for s in _SENTENCE_SPLIT.split(lowered) if s.strip()]
        if any(s.split()[0].lower().strip(":,") in _IMPERATIVE_VERBS for s in sentences):
            matched.append("imperative_lead")
        if _SECOND_PERSON.search(text):
            matched.append("second_person")
        if _OUTPUT_FORCING.search(text):
            matched.append("output_forcing")
        if _TASK_OVERRIDE.search(text):
            matched.append("task_override")
        if _TOOL_TOKEN.search(text):
            matched.append("tool_token")
        if _ROLE_IMPERSONATION.search(text):
            matched.append("role_impersonation")
        total = sum(self.WEIGHTS[m] for m in matched)
        return min(1.0, total), tuple(matched)


DEFAULT_SCORER = HeuristicDirectiveScorer()


_FENCE = re.compile(r"^(```|~~~)")
_HEADING = re.compile(r"^#{1,6}\s")
_LIST_ITEM = re.compile(r"^\s*([-*+]|\d+[.)])\s")
_TAG = re.compile(r"<[^>]+>")


def channel_tier(channel: str) -> TrustTier:
    return _CHANNEL_TIERS.get(channel, TrustTier.EXTERNAL)


def segment(content: str, source: Origin, fmt: str = "txt") -> SegmentedDocument:
    """Split on paragraph boundaries and structural markers.

    Segments are contiguous slices of the original text (separators kept
    with the preceding segment), so concatenation reconstructs the document
    byte-exactly.
    """
    if isinstance(content, bytes):  # defensive: callers should pass str
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError(str(exc)) from exc

    text = content
    if fmt == "html":
        # naive de-tagging; the reconstruction invariant applies to the
        # de-tagged text for html inputs
        text = _TAG.sub("", content)

    lines = text.splitlines(keepends=True)
    blocks: list[str] = []
    current: list[str] = []
    in_fence = False
    closed = False  # current block has seen its terminating blank line

    def flush() -> None:
        nonlocal closed
        if current:
            blocks.append("".join(current))
            current.clear()
        closed = False

    for line in lines:
        stripped = line.strip()
        if in_fence:
            current.append(line)
            if _FENCE.match(stripped):
                in_fence = False
                flush()
            continue
        if _FENCE.match(stripped):
            flush()
            current.append(line)
            in_fence = True
            continue
        if not stripped:
            if current:
                current.append(line)
                closed = True
            elif blocks:
                blocks[-1] += line
            else:
                current.append(line)
                closed = True
            continue
        if _HEADING.match(line):
            flush()
            blocks.append(line)
            continue
        if _LIST_ITEM.match(line):
            flush()
            current.append(line)
            continue
        if closed:
            flush()
        current.append(line)
    flush()

    tier = channel_tier(source.channel)
    doc_tag = sha256_hex(text.encode("utf-8"))[:8]
    segments = tuple(
        TaggedSegment(id=f"{doc_tag}-{i:04d}", content=block, tier=tier, origin=source)
        for i, block in enumerate(blocks)
    )
    return SegmentedDocument(source=source, segments=segments)


def score_directive_intent(seg: TaggedSegment,
                           scorer: DirectiveScorer = DEFAULT_SCORER) -> float:
    score, _ = scorer.score(seg.content)
    return score


def scan(doc: SegmentedDocument,
         scorer: DirectiveScorer = DEFAULT_SCORER,
         t_sanitize: float = T_SANITIZE_DEFAULT,
         t_quarantine: float = T_QUARANTINE_DEFAULT) -> tuple[SegmentedDocument, FirewallReport]:
    """Score every segment and produce the firewall report."""
    scored_segments: list[TaggedSegment] = []
    rows: list[tuple[str, float, tuple[str, ...]]] = []
    max_score = 0.0
    for seg in doc.segments:
        score, patterns = scorer.score(seg.content)
        scored_segments.append(seg.with_score(score))
        rows.append((seg.id, score, patterns))
        max_score = max(max_score, score)
    if max_score >= t_quarantine:
        verdict = Verdict(Decision.QUARANTINE, Layer.INPUT,
                          f"directive intent {max_score:.2f} >= quarantine threshold {t_quarantine}",
                          risk=max_score)
    elif max_score >= t_sanitize:
        verdict = Verdict(Decision.SANITIZE, Layer.INPUT,
                          f"directive intent {max_score:.2f} in sanitize band",
                          risk=max_score)
    else:
        verdict = allow(Layer.INPUT, f"max directive intent {max_score:.2f}", risk=max_score)
    scored_doc = SegmentedDocument(source=doc.source, segments=tuple(scored_segments))
    report = FirewallReport(document=doc.source, per_segment=tuple(rows),
                            max_score=max_score, verdict=verdict)
    return scored_doc, report


def respond(report: FirewallReport, doc: SegmentedDocument,
            t_sanitize: float = T_SANITIZE_DEFAULT,
            t_quarantine: float = T_QUARANTINE_DEFAULT) -> tuple[SegmentedDocument, Verdict]:
    """Graduated response: pass through, redact in place, or quarantine."""
    if report.max_score >= t_quarantine:
        empty = SegmentedDocument(source=doc.source, segments=())
        return empty, report.verdict
    if report.max_score >= t_sanitize:
        scores = {sid: score for sid, score, _ in report.per_segment}
        redacted = tuple(
            seg if scores.get(seg.id, 0.0) < t_sanitize
            else TaggedSegment(id=seg.id, content=REDACTION_PLACEHOLDER, tier=seg.tier,
                               origin=seg.origin, directive_score=seg.directive_score)
            for seg in doc.segments
        )
        return SegmentedDocument(source=doc.source, segments=redacted), report.verdict
    return doc, report.verdict


@dataclass(frozen=True)
class ContextBlock:
    """One ordered context entry; external data carries a boundary marker."""

    segment: TaggedSegment
    data_only: bool
    boundary_tag: Optional[str]  # H(content || tier) for forgery detection


def boundary_tag(seg: TaggedSegment) -> str:
    return sha256_hex(seg.content.encode("utf-8") + bytes([int(seg.tier)]))


def enforce_hierarchy(segments: Sequence[TaggedSegment], system_prompt: TaggedSegment,
                      t_sanitize: float = T_SANITIZE_DEFAULT) -> list[ContextBlock]:
    """Order context by tier (descending, stable) with data-only markers.

    External segments whose directive score has crossed the sanitize
    threshold are held out pending the firewall verdict.
    """
    if system_prompt.tier is not TrustTier.SYSTEM:
        raise ValueError("system prompt must carry the System tier")
    pool = [system_prompt, *segments]
    kept = [
        seg for seg in pool
        if not (
            seg.tier is TrustTier.EXTERNAL
            and seg.directive_score is not None
            and seg.directive_score >= t_sanitize
        )
    ]
    ordered = sorted(kept, key=lambda s: -int(s.tier))  # sorted() is stable
    return [
        ContextBlock(
            segment=seg,
            data_only=seg.tier is TrustTier.EXTERNAL,
            boundary_tag=boundary_tag(seg) if seg.tier is TrustTier.EXTERNAL else None,
        )
        for seg in ordered
    ]
