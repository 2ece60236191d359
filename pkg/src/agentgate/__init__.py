"""agentgate: lifecycle security gateway for autonomous agents.

Five defense layers mediate the agent's operational stages: foundation
(initialization vetting), input (content firewall), cognitive (memory
integrity + drift), decision (plan checking), and execution (capability
enforcement + staged-chain detection). A deterministic harness replays
known attack scenarios and verifies which layer intercepts each one.
"""

from agentgate.core import (
    ALL_LAYERS,
    AuditChain,
    AuditEvent,
    Decision,
    Layer,
    Origin,
    TaggedSegment,
    TrustTier,
    Verdict,
    combine_tiers,
)

__all__ = [
    "ALL_LAYERS",
    "AuditChain",
    "AuditEvent",
    "Decision",
    "Layer",
    "Origin",
    "TaggedSegment",
    "TrustTier",
    "Verdict",
    "combine_tiers",
]

__version__ = "0.1.0"
