// End-to-end review loop against a live gateway replaying the intent-drift
// scenario: the escalated plan must wait for the console decision, a deny
// must keep the service-restart step from executing, the outcome must be
// visible in the audit stream, and a decision race must produce exactly
// one effective decision.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ConflictError, GatewayClient } from "../src/api.js";

const PORT = 8891;
const BASE = `http://127.0.0.1:${PORT}`;
const TOKEN = "console-test-token";

let gatewayProc: ChildProcess;

async function waitFor<T>(
  probe: () => Promise<T | null>,
  timeoutMs: number,
  label: string,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const value = await probe();
      if (value !== null) return value;
    } catch (error) {
      lastError = error;
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error(`timed out waiting for ${label}: ${String(lastError)}`);
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "agentgate-console-"));
  const configPath = join(dir, "config.json");
  writeFileSync(configPath, JSON.stringify({
    gateway: {
      hitl_deadline_ms: 30000,
      listen_host: "127.0.0.1",
      listen_port: PORT,
      reviewer_token: TOKEN,
    },
  }));
  gatewayProc = spawn("gateway", ["run", "--config", configPath, "--scenario", "intent_drift"], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  gatewayProc.stderr?.on("data", () => {});
  await waitFor(async () => {
    const resp = await fetch(`${BASE}/health`);
    return resp.ok ? true : null;
  }, 20000, "gateway /health");
}, 30000);

afterAll(() => {
  gatewayProc?.kill("SIGTERM");
});

describe("live review loop (intent-drift scenario)", () => {
  it("deny through the console blocks the restart and lands in the audit stream", async () => {
    const client = new GatewayClient(BASE, TOKEN);

    const pendingItem = await waitFor(async () => {
      const items = await client.listPending();
      const open = items.filter((item) => item.state === "pending");
      return open.length > 0 ? open[0] : null;
    }, 20000, "a pending escalation");

    const detail = await client.pendingDetail(pendingItem.id);
    expect(detail.risk).toBeGreaterThanOrEqual(0.5);
    expect(detail.risk).toBeLessThan(0.8);
    expect(detail.provenance.manifest_hash).toBeTruthy();
    const planText = JSON.stringify(detail.step);
    expect(planText).toContain("systemctl restart");

    // race: two reviewers decide concurrently; exactly one wins
    const [first, second] = await Promise.allSettled([
      client.submitDecision(pendingItem.id, "deny", "dana"),
      client.submitDecision(pendingItem.id, "approve", "mallory"),
    ]);
    const outcomes = [first, second];
    const fulfilled = outcomes.filter((o) => o.status === "fulfilled");
    const conflicts = outcomes.filter(
      (o) => o.status === "rejected" && o.reason instanceof ConflictError,
    );
    expect(fulfilled).toHaveLength(1);
    expect(conflicts).toHaveLength(1);

    // the replay finishes; the attack must not have succeeded
    const result = await waitFor(async () => {
      const resp = await fetch(`${BASE}/replay/result`);
      const body = await resp.json();
      return body.state === "done" ? body : null;
    }, 20000, "replay result");
    expect(result.attack_succeeded).toBe(false);

    // the decision is visible in the audit stream, and no restart executed
    const audit = await client.auditSince(0);
    const hitl = audit.filter((ev) => ev.subject.startsWith("hitl:"));
    expect(hitl.length).toBeGreaterThanOrEqual(1);
    const effective = hitl[hitl.length - 1];
    const winner = fulfilled[0].status === "fulfilled" ? fulfilled[0].value : null;
    if (winner?.state === "denied") {
      expect(effective.verdict.decision).toBe("deny");
    } else {
      expect(effective.verdict.decision).toBe("allow");
    }
    const executedRestarts = audit.filter(
      (ev) =>
        ev.subject.startsWith("execute:systemctl restart") &&
        ev.verdict.decision === "allow",
    );
    if (winner?.state === "denied") {
      expect(executedRestarts).toHaveLength(0);
    }

    // a follow-up decision on the settled action conflicts cleanly
    await expect(
      client.submitDecision(pendingItem.id, "deny", "late-reviewer"),
    ).rejects.toBeInstanceOf(ConflictError);
  }, 40000);
});
