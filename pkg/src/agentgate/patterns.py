"""Resource-pattern grammar shared by the policy layers.

A resource reference is `<domain>:<pattern>` with domain one of
`file`, `net`, `proc`:

  file:/workspace/**      absolute path glob; `*` matches within a path
                          segment, `**` matches any number of segments
  net:host:port           host may use `*` / `**`; port numeric or `*`
  proc:name               process or script identity glob

A capability is `<domain>:<pattern>:<action>` (the pattern keeps any
inner colons, e.g. `net:*.example.com:443:connect`).
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass
from enum import Enum


class Domain(Enum):
    FILESYSTEM = "file"
    NETWORK = "net"
    PROCESS = "proc"


class Action(Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"
    CONNECT = "connect"
    SPAWN = "spawn"


class PatternError(ValueError):
    """Malformed resource pattern or capability string."""


def _glob_covers(p: str, q: str) -> bool:
    """True if char-glob p matches every string q matches (`*` = any run)."""
    if p == "":
        return q == ""
    if p[0] == "*":
        return _glob_covers(p[1:], q) or (bool(q) and _glob_covers(p, q[1:]))
    if q and q[0] == "*":
        return False  # q matches arbitrary text; only a leading * in p could cover
    return bool(q) and p[0] == q[0] and _glob_covers(p[1:], q[1:])


def _segments_cover(p: list[str], q: list[str]) -> bool:
    """Segment-glob coverage; `**` spans any number of segments."""
    if not p:
        return not q
    if p[0] == "**":
        return _segments_cover(p[1:], q) or (bool(q) and _segments_cover(p, q[1:]))
    if q and q[0] == "**":
        return False
    return bool(q) and _glob_covers(p[0], q[0]) and _segments_cover(p[1:], q[1:])


def normalize_path_pattern(pattern: str) -> str:
    """Normalize a filesystem pattern to an absolute form without `..`."""
    if not pattern.startswith("/"):
        raise PatternError(f"filesystem pattern must be absolute: {pattern!r}")
    norm = posixpath.normpath(pattern)
    if ".." in norm.split("/"):
        raise PatternError(f"filesystem pattern escapes root: {pattern!r}")
    return norm


@dataclass(frozen=True)
class Resource:
    """A parsed `<domain>:<pattern>` reference."""

    domain: Domain
    pattern: str

    def __post_init__(self) -> None:
        if self.domain is Domain.FILESYSTEM:
            object.__setattr__(self, "pattern", normalize_path_pattern(self.pattern))

    def covers(self, other: "Resource") -> bool:
        """True when every concrete resource matched by `other` is matched by self."""
        if self.domain is not other.domain:
            return False
        if self.domain is Domain.FILESYSTEM:
            return _segments_cover(self.pattern.split("/"), other.pattern.split("/"))
        return _glob_covers(self.pattern, other.pattern)

    def intersects(self, other: "Resource") -> bool:
        """Conservative overlap test; exact when either side is concrete."""
        return self.covers(other) or other.covers(self)

    def __str__(self) -> str:
        return f"{self.domain.value}:{self.pattern}"

    @classmethod
    def parse(cls, text: str) -> "Resource":
        head, sep, rest = text.partition(":")
        if not sep or not rest:
            raise PatternError(f"expected <domain>:<pattern>: {text!r}")
        try:
            domain = Domain(head)
        except ValueError as exc:
            raise PatternError(f"unknown domain {head!r} in {text!r}") from exc
        return cls(domain, rest)


@dataclass(frozen=True)
class Capability:
    """Authority to perform one action on resources matching a pattern."""

    domain: Domain
    pattern: str
    action: Action

    def __post_init__(self) -> None:
        if self.domain is Domain.FILESYSTEM:
            object.__setattr__(self, "pattern", normalize_path_pattern(self.pattern))

    @property
    def resource(self) -> Resource:
        return Resource(self.domain, self.pattern)

    def subsumes(self, other: "Capability") -> bool:
        return (
            self.domain is other.domain
            and self.action is other.action
            and self.resource.covers(other.resource)
        )

    def __str__(self) -> str:
        return f"{self.domain.value}:{self.pattern}:{self.action.value}"

    @classmethod
    def parse(cls, text: str) -> "Capability":
        head, sep, rest = text.partition(":")
        if not sep:
            raise PatternError(f"expected <domain>:<pattern>:<action>: {text!r}")
        body, sep2, tail = rest.rpartition(":")
        if not sep2 or not body:
            raise PatternError(f"expected <domain>:<pattern>:<action>: {text!r}")
        try:
            domain = Domain(head)
            action = Action(tail)
        except ValueError as exc:
            raise PatternError(f"bad domain or action in {text!r}") from exc
        return cls(domain, body, action)


# RBAC bound patterns are coarser: `<domain>:<action>` with `*` wildcards on
# either side, over the finite domain x action universe.

_RBAC_DOMAIN_ALIASES = {
    "file": Domain.FILESYSTEM,
    "filesystem": Domain.FILESYSTEM,
    "net": Domain.NETWORK,
    "network": Domain.NETWORK,
    "proc": Domain.PROCESS,
    "process": Domain.PROCESS,
}

RBAC_UNIVERSE = frozenset((d, a) for d in Domain for a in Action)


def rbac_pattern_set(pattern: str) -> frozenset[tuple[Domain, Action]]:
    """Expand an rbac pattern like `process:*` over the finite universe."""
    head, sep, tail = pattern.partition(":")
    if not sep:
        raise PatternError(f"expected <domain>:<action> rbac pattern: {pattern!r}")
    if head == "*":
        domains = set(Domain)
    elif head in _RBAC_DOMAIN_ALIASES:
        domains = {_RBAC_DOMAIN_ALIASES[head]}
    else:
        raise PatternError(f"unknown rbac domain {head!r}")
    if tail == "*":
        actions = set(Action)
    else:
        try:
            actions = {Action(tail)}
        except ValueError as exc:
            raise PatternError(f"unknown rbac action {tail!r}") from exc
    return frozenset((d, a) for d in domains for a in actions)


def rbac_within_ceiling(bound: str, ceiling: list[str]) -> bool:
    """True when every (domain, action) the bound grants is under some ceiling pattern."""
    allowed: set[tuple[Domain, Action]] = set()
    for pat in ceiling:
        allowed |= rbac_pattern_set(pat)
    return rbac_pattern_set(bound) <= allowed
