import { describe, expect, it } from "vitest";

import {
  renderAudit,
  renderConflictNotice,
  renderDetail,
  renderQueue,
} from "../src/views.js";
import type { AuditEventRecord, PendingDetail, PendingSummary } from "../src/types.js";

const summary: PendingSummary = {
  id: "pa0000-abcd1234",
  risk: 0.575,
  state: "pending",
  created_at: 1700000001000,
  deadline: 1700000011000,
  goal: "eliminate the security risk by blocking traffic and hardening the gateway",
  decided_by: null,
};

const detail: PendingDetail = {
  id: "pa0000-abcd1234",
  step: {
    plan: {
      goal: "eliminate the security risk by blocking traffic and hardening the gateway",
      steps: [
        { tool: "shell", args: [["command", "iptables -A INPUT -s 114.244.130.144 -j DROP"]], reads: [], writes: [], reversible: true },
        { tool: "shell", args: [["command", "systemctl restart agentd-gateway"]], reads: [], writes: [], reversible: false },
      ],
    },
  },
  risk: 0.575,
  provenance: {
    plan_goal: "eliminate the security risk by blocking traffic and hardening the gateway",
    manifest_hash: "ab".repeat(32),
    segment_ids: ["deadbeef-0001"],
    session: "replay-intent_drift",
  },
  state: "pending",
  created_at: 1700000001000,
  deadline: 1700000011000,
  decided_by: null,
  risk_breakdown: {
    weights: { irreversibility: 0.4, privilege_breadth: 0.3, alignment_deficit: 0.3 },
  },
};

describe("renderQueue", () => {
  it("shows an empty state when nothing is pending", () => {
    expect(renderQueue([])).toContain("No pending actions");
  });

  it("renders one row per action with risk and state", () => {
    const html = renderQueue([summary]);
    expect(html).toContain("pa0000-abcd1234");
    expect(html).toContain("0.575");
    expect(html).toContain("risk-escalate");
    expect(html).toContain("state-pending");
  });
});

describe("renderDetail", () => {
  it("displays the API risk verbatim with the weight breakdown", () => {
    const html = renderDetail(detail);
    expect(html).toContain("0.575");
    expect(html).toContain("irreversibility: 0.4");
    expect(html).toContain("privilege_breadth: 0.3");
  });

  it("shows provenance: manifest hash, session, segment badges", () => {
    const html = renderDetail(detail);
    expect(html).toContain("ab".repeat(32));
    expect(html).toContain("replay-intent_drift");
    expect(html).toContain("deadbeef-0001");
  });

  it("flags irreversible steps and offers approve/deny while pending", () => {
    const html = renderDetail(detail);
    expect(html).toContain("irreversible");
    expect(html).toContain("systemctl restart agentd-gateway");
    expect(html).toContain('class="approve"');
    expect(html).toContain('class="deny"');
  });

  it("renders expired actions as non-actionable", () => {
    const html = renderDetail({ ...detail, state: "expired" });
    expect(html).not.toContain("<button");
    expect(html).toContain("not actionable");
    expect(html).toContain("state-expired");
  });

  it("escapes html in untrusted fields", () => {
    const hostile = {
      ...detail,
      provenance: { ...detail.provenance, session: "<script>alert(1)</script>" },
    };
    const html = renderDetail(hostile);
    expect(html).not.toContain("<script>alert(1)</script>");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("renderAudit", () => {
  it("lists events with layer and decision", () => {
    const events: AuditEventRecord[] = [
      {
        seq: 0, timestamp: 1, layer: "decision",
        subject: "plan_submission:eliminate the security risk",
        verdict: { decision: "escalate", layer: "decision", reason: "alignment 0.00", risk: 0.575 },
        prev_hash: "0".repeat(64), this_hash: "1".repeat(64),
      },
    ];
    const html = renderAudit(events);
    expect(html).toContain("escalate");
    expect(html).toContain("plan_submission:eliminate the security risk");
  });
});

describe("renderConflictNotice", () => {
  it("names the contested action", () => {
    expect(renderConflictNotice("pa0000-x")).toContain("pa0000-x");
    expect(renderConflictNotice("pa0000-x")).toContain("already decided");
  });
});
